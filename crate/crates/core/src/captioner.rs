//! Initial prompts for target images.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fixtures::ToyFixture;
use crate::tokenizer::Tokenizer;
use crate::types::{normalize_text, ImageTensor, Prompt};

/// Something that describes an image in words. Implementations must be
/// deterministic for a fixed configuration and safe to call concurrently.
pub trait CaptionProvider: Send + Sync {
    fn name(&self) -> &str;

    /// Raw caption text, before the length policy.
    fn caption_text(&self, x: &ImageTensor) -> Result<String>;
}

impl<T: CaptionProvider + ?Sized> CaptionProvider for &T {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn caption_text(&self, x: &ImageTensor) -> Result<String> {
        (**self).caption_text(x)
    }
}

/// Tokenize a caption and keep at most `max_tokens` tokens. Padding to the
/// encoder length happens at encode time.
pub fn apply_length_policy(text: &str, tokenizer: &dyn Tokenizer, max_tokens: usize) -> Result<Prompt> {
    let full = tokenizer.tokenize(&normalize_text(text))?;
    if full.len() <= max_tokens {
        return Ok(full);
    }
    tokenizer.prompt_from_ids(&full.token_ids()[..max_tokens])
}

pub fn caption(
    provider: &(impl CaptionProvider + ?Sized),
    tokenizer: &dyn Tokenizer,
    x: &ImageTensor,
    init_prompt_len: usize,
) -> Result<Prompt> {
    let text = provider.caption_text(x)?;
    apply_length_policy(&text, tokenizer, init_prompt_len)
}

/// Table lookup keyed by the hex SHA-256 of the image's 8-bit pixel buffer.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FixtureCaptioner {
    table: BTreeMap<String, String>,
}

impl FixtureCaptioner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (String, String)>) -> Self {
        Self {
            table: entries.into_iter().collect(),
        }
    }

    pub fn from_fixtures(fixtures: &[ToyFixture]) -> Self {
        Self::from_entries(
            fixtures
                .iter()
                .map(|f| (f.target.content_hash_hex(), f.caption.clone())),
        )
    }

    pub fn insert(&mut self, x: &ImageTensor, caption: impl Into<String>) {
        self.table.insert(x.content_hash_hex(), caption.into());
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.table.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl CaptionProvider for FixtureCaptioner {
    fn name(&self) -> &str {
        "fixture"
    }

    fn caption_text(&self, x: &ImageTensor) -> Result<String> {
        let hash = x.content_hash_hex();
        self.table
            .get(&hash)
            .cloned()
            .ok_or(Error::NoCaption { hash })
    }
}

/// Tries each provider in order and returns the first hit. A miss is only
/// reported if every provider misses; other errors surface immediately.
pub struct ChainCaptioner<'a> {
    providers: Vec<&'a dyn CaptionProvider>,
}

impl<'a> ChainCaptioner<'a> {
    pub fn new(providers: Vec<&'a dyn CaptionProvider>) -> Self {
        Self { providers }
    }
}

impl CaptionProvider for ChainCaptioner<'_> {
    fn name(&self) -> &str {
        "chain"
    }

    fn caption_text(&self, x: &ImageTensor) -> Result<String> {
        for p in &self.providers {
            match p.caption_text(x) {
                Err(Error::NoCaption { .. }) => continue,
                other => return other,
            }
        }
        Err(Error::NoCaption {
            hash: x.content_hash_hex(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::Vocabulary;

    fn image(v: f64) -> ImageTensor {
        ImageTensor::new(2, 2, alloc::vec![v; 12]).unwrap()
    }

    #[test]
    fn lookup_hit_and_miss() {
        let vocab = Vocabulary::toy(64).unwrap();
        let mut fc = FixtureCaptioner::new();
        fc.insert(&image(0.2), "a red cat");
        let p = caption(&fc, &vocab, &image(0.2), 16).unwrap();
        assert_eq!(p.text(), "a red cat");
        assert_eq!(p, caption(&fc, &vocab, &image(0.2), 16).unwrap());
        assert!(matches!(
            caption(&fc, &vocab, &image(0.7), 16),
            Err(Error::NoCaption { .. })
        ));
    }

    #[test]
    fn long_captions_are_truncated() {
        let vocab = Vocabulary::toy(64).unwrap();
        let text = ["red"; 20].join(" ");
        let mut fc = FixtureCaptioner::new();
        fc.insert(&image(0.1), text);
        let p = caption(&fc, &vocab, &image(0.1), 16).unwrap();
        assert_eq!(p.len(), 16);
        assert_eq!(p.words().count(), 16);
    }

    #[test]
    fn chain_falls_through_misses() {
        let vocab = Vocabulary::toy(64).unwrap();
        let mut a = FixtureCaptioner::new();
        a.insert(&image(0.1), "a cat");
        let mut b = FixtureCaptioner::new();
        b.insert(&image(0.3), "a dog");
        let chain = ChainCaptioner::new(alloc::vec![&a, &b]);
        assert_eq!(caption(&chain, &vocab, &image(0.3), 16).unwrap().text(), "a dog");
        assert!(chain.caption_text(&image(0.9)).is_err());
    }
}
