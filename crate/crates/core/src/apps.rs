//! Prompt editing, fusion and evolutionary concept mixing.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::backend::{DiffusionBackend, TextEncoder};
use crate::captioner::{CaptionProvider, ChainCaptioner, FixtureCaptioner};
use crate::corpus::CONJUNCTION;
use crate::e2t::E2TBundle;
use crate::error::{Error, Result};
use crate::optimizer::{invert, Clock};
use crate::tokenizer::Tokenizer;
use crate::types::{normalize_text, ImageTensor, InversionConfig, Prompt};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditSpec {
    pub remove: Vec<String>,
    pub replace: BTreeMap<String, String>,
}

impl EditSpec {
    pub fn new(remove: Vec<String>, replace: BTreeMap<String, String>) -> Result<Self> {
        let spec = Self { remove, replace };
        spec.validate()?;
        Ok(spec)
    }

    /// A word may not be both removed and replaced.
    pub fn validate(&self) -> Result<()> {
        if let Some(w) = self.remove.iter().find(|w| self.replace.contains_key(*w)) {
            return Err(Error::InvalidConfig(alloc::format!(
                "{w:?} is both removed and replaced"
            )));
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.remove.is_empty() && self.replace.is_empty()
    }
}

/// Word-level removal and substitution; other words keep their order.
pub fn edit_prompt(p: &Prompt, spec: &EditSpec, tokenizer: &dyn Tokenizer) -> Result<Prompt> {
    spec.validate()?;
    if p.is_empty() {
        return Err(Error::EmptyPrompt);
    }
    let remove: BTreeSet<String> = spec.remove.iter().map(|w| normalize_text(w)).collect();
    let replace: BTreeMap<String, String> = spec
        .replace
        .iter()
        .map(|(k, v)| (normalize_text(k), normalize_text(v)))
        .collect();
    let words: Vec<&str> = p
        .words()
        .filter(|w| !remove.contains(*w))
        .map(|w| replace.get(w).map_or(w, String::as_str))
        .filter(|w| !w.is_empty())
        .collect();
    if words.is_empty() {
        return Err(Error::EmptyPrompt);
    }
    tokenizer.tokenize(&words.join(" "))
}

/// `p1 and p2`, cut to `max_tokens` tokens.
pub fn fuse_prompts(p1: &Prompt, p2: &Prompt, max_tokens: usize, tokenizer: &dyn Tokenizer) -> Result<Prompt> {
    if p1.is_empty() || p2.is_empty() {
        return Err(Error::EmptyPrompt);
    }
    let sep = tokenizer.token_id(CONJUNCTION).ok_or_else(|| Error::UnknownWord {
        word: CONJUNCTION.into(),
    })?;
    let mut ids: Vec<_> = p1.token_ids().to_vec();
    ids.push(sep);
    ids.extend_from_slice(p2.token_ids());
    ids.truncate(max_tokens);
    tokenizer.prompt_from_ids(&ids)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LineageEntry {
    pub generation: usize,
    /// Inverted prompts of this generation's inputs.
    pub parents: Vec<Prompt>,
    pub prompt: Prompt,
    pub image: ImageTensor,
}

/// Each generation inverts its inputs, fuses the prompts left to right and
/// generates from the result. The next generation pairs that image with the
/// next source image in turn. Images produced along the way are captioned
/// with the prompt that generated them.
#[allow(clippy::too_many_arguments)]
pub fn evolutionary_generate<B, E>(
    backend: &B,
    e2t: &E2TBundle<E>,
    captioner: &(impl CaptionProvider + ?Sized),
    images: &[ImageTensor],
    generations: usize,
    cfg: &InversionConfig,
    clock: &dyn Clock,
) -> Result<Vec<LineageEntry>>
where
    B: DiffusionBackend + ?Sized,
    E: TextEncoder,
{
    if images.len() < 2 {
        return Err(Error::InvalidConfig("evolution needs at least two images".into()));
    }
    if generations == 0 {
        return Err(Error::InvalidConfig("generations must be >= 1".into()));
    }
    let tokenizer = backend.tokenizer();
    let max_tokens = backend.seq_len();
    let noise = backend.noise_spec(cfg.noise_seed);
    let mut overlay = FixtureCaptioner::new();
    let mut inputs: Vec<ImageTensor> = images.to_vec();
    let mut lineage = Vec::with_capacity(generations);
    for generation in 0..generations {
        let step = || -> Result<LineageEntry> {
            let chain = ChainCaptioner::new(alloc::vec![&captioner as &dyn CaptionProvider, &overlay]);
            let parents = inputs
                .iter()
                .map(|x| invert(backend, &chain, e2t, x, cfg, clock).map(|r| r.prompt))
                .collect::<Result<Vec<_>>>()?;
            let mut fused = parents[0].clone();
            for p in &parents[1..] {
                fused = fuse_prompts(&fused, p, max_tokens, tokenizer)?;
            }
            let c = backend.encode_text(&fused)?;
            let raw = backend.generate(&c, &noise, cfg.denoise_steps)?;
            let image = ImageTensor::from_rgb8(raw.height(), raw.width(), &raw.to_rgb8())?;
            Ok(LineageEntry {
                generation,
                parents,
                prompt: fused,
                image,
            })
        };
        let entry = step().map_err(|source| Error::Generation {
            generation,
            source: alloc::boxed::Box::new(source),
        })?;
        overlay.insert(&entry.image, entry.prompt.text());
        inputs = alloc::vec![entry.image.clone(), images[(generation + 1) % images.len()].clone()];
        lineage.push(entry);
    }
    Ok(lineage)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::Vocabulary;

    fn vocab() -> Vocabulary {
        Vocabulary::toy(64).unwrap()
    }

    #[test]
    fn edit_examples() {
        let v = vocab();
        let p = v.tokenize("a red cat on a table").unwrap();
        assert_eq!(edit_prompt(&p, &EditSpec::default(), &v).unwrap(), p);
        let removed = edit_prompt(&p, &EditSpec::new(alloc::vec!["red".into()], BTreeMap::new()).unwrap(), &v).unwrap();
        assert_eq!(removed.text(), "a cat on a table");
        let mut rep = BTreeMap::new();
        rep.insert(String::from("cat"), String::from("dog"));
        let replaced = edit_prompt(&p, &EditSpec::new(alloc::vec![], rep).unwrap(), &v).unwrap();
        assert_eq!(replaced.text(), "a red dog on a table");
        let everything = EditSpec::new(
            p.words().map(String::from).collect(),
            BTreeMap::new(),
        )
        .unwrap();
        assert!(matches!(edit_prompt(&p, &everything, &v), Err(Error::EmptyPrompt)));
    }

    #[test]
    fn overlapping_edit_spec_is_rejected() {
        let mut rep = BTreeMap::new();
        rep.insert(String::from("cat"), String::from("dog"));
        assert!(EditSpec::new(alloc::vec!["cat".into()], rep).is_err());
    }

    #[test]
    fn fuse_examples() {
        let v = vocab();
        let a = v.tokenize("a cat").unwrap();
        let b = v.tokenize("a dog").unwrap();
        assert_eq!(fuse_prompts(&a, &b, 16, &v).unwrap().text(), "a cat and a dog");
        assert_eq!(fuse_prompts(&a, &a, 16, &v).unwrap().text(), "a cat and a cat");
        assert_eq!(fuse_prompts(&a, &b, 3, &v).unwrap().text(), "a cat and");
        assert!(fuse_prompts(&a, &Prompt::from_parts("", alloc::vec![]), 16, &v).is_err());
    }
}
