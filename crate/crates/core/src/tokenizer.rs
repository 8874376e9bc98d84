//! Word-level tokenization.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::corpus;
use crate::error::{Error, Result};
use crate::types::{normalize_text, Prompt, TokenId};

pub const PAD_TOKEN: &str = "<pad>";
pub const PAD_ID: TokenId = 0;

/// Maps normalized text to token ids and back.
pub trait Tokenizer: Send + Sync {
    fn vocab_size(&self) -> usize;

    fn pad_id(&self) -> TokenId {
        PAD_ID
    }

    fn token_id(&self, word: &str) -> Option<TokenId>;

    fn token_str(&self, id: TokenId) -> Option<&str>;

    /// Tokenize into a [`Prompt`]. Unknown words are an error.
    fn tokenize(&self, text: &str) -> Result<Prompt> {
        let text = normalize_text(text);
        let ids = text
            .split(' ')
            .filter(|w| !w.is_empty())
            .map(|w| {
                self.token_id(w).ok_or_else(|| Error::UnknownWord {
                    word: w.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Prompt::from_parts(text, ids))
    }

    /// Build a prompt from ids, dropping padding.
    fn prompt_from_ids(&self, ids: &[TokenId]) -> Result<Prompt> {
        let pad = self.pad_id();
        let mut text = String::new();
        let mut kept = Vec::with_capacity(ids.len());
        for &id in ids.iter().filter(|&&id| id != pad) {
            let word = self.token_str(id).ok_or(Error::OutOfVocabulary {
                id,
                vocab_size: self.vocab_size(),
            })?;
            if !text.is_empty() {
                text.push(' ');
            }
            text.push_str(word);
            kept.push(id);
        }
        Ok(Prompt::from_parts(text, kept))
    }

    fn detokenize(&self, ids: &[TokenId]) -> Result<String> {
        Ok(self.prompt_from_ids(ids)?.text().to_string())
    }
}

/// Fixed word list; id 0 is the pad token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: BTreeMap<String, TokenId>,
}

impl Vocabulary {
    /// `words` must not contain the pad token; it is inserted at id 0.
    pub fn new<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut all = alloc::vec![PAD_TOKEN.to_string()];
        let mut index = BTreeMap::new();
        index.insert(PAD_TOKEN.to_string(), PAD_ID);
        for w in words {
            let w = normalize_text(w.as_ref());
            if w.is_empty() || w.contains(' ') {
                return Err(Error::InvalidConfig(format!("invalid vocabulary word {w:?}")));
            }
            if index.contains_key(&w) {
                return Err(Error::InvalidConfig(format!("duplicate vocabulary word {w:?}")));
            }
            index.insert(w.clone(), all.len() as TokenId);
            all.push(w);
        }
        Ok(Self { words: all, index })
    }

    /// The toy vocabulary of exactly `size` entries: pad, the synthetic
    /// corpus words, then `tok<k>` fillers.
    pub fn toy(size: usize) -> Result<Self> {
        let base: Vec<&str> = corpus::vocabulary_words().collect();
        let needed = base.len() + 1;
        if size < needed {
            return Err(Error::InvalidConfig(format!(
                "toy vocabulary needs at least {needed} entries, got {size}"
            )));
        }
        let fillers = (0..size - needed).map(|k| format!("tok{k}"));
        Self::new(base.into_iter().map(String::from).chain(fillers))
    }

    /// Every entry including the pad token, in id order.
    pub fn words(&self) -> &[String] {
        &self.words
    }
}

impl Tokenizer for Vocabulary {
    fn vocab_size(&self) -> usize {
        self.words.len()
    }

    fn token_id(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    fn token_str(&self, id: TokenId) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_vocabulary_has_requested_size() {
        let v = Vocabulary::toy(64).unwrap();
        assert_eq!(v.vocab_size(), 64);
        assert_eq!(v.token_str(PAD_ID), Some(PAD_TOKEN));
        assert!(v.token_id("and").is_some());
        assert!(Vocabulary::toy(5).is_err());
    }

    #[test]
    fn tokenize_round_trip_normalizes() {
        let v = Vocabulary::toy(64).unwrap();
        let p = v.tokenize("A  Red CAT on a table").unwrap();
        assert_eq!(p.text(), "a red cat on a table");
        assert_eq!(v.detokenize(p.token_ids()).unwrap(), p.text());
    }

    #[test]
    fn unknown_word_is_named() {
        let v = Vocabulary::toy(64).unwrap();
        match v.tokenize("a zebra") {
            Err(Error::UnknownWord { word }) => assert_eq!(word, "zebra"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn padding_is_dropped_when_decoding() {
        let v = Vocabulary::toy(64).unwrap();
        let p = v.tokenize("a cat").unwrap();
        let mut ids = p.token_ids().to_vec();
        ids.extend([PAD_ID, PAD_ID]);
        assert_eq!(v.prompt_from_ids(&ids).unwrap(), p);
        assert!(v.prompt_from_ids(&[999]).is_err());
    }

    #[test]
    fn duplicate_words_rejected() {
        assert!(Vocabulary::new(["a", "A"]).is_err());
    }
}
