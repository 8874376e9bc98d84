//! Embedding-to-text inversion: a zero-step generator `p(x | c)`, an
//! iterative corrector `p(x | c, x̂, T(x̂))`, and beam search that keeps the
//! candidates whose re-embedding lands closest to the target.

mod model;
mod train;

pub use model::{Conditioning, ModelDims, ModelRole, SequenceModel};
pub use train::{train_corrector, train_zero_step, TrainConfig, TrainReport};

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::backend::TextEncoder;
use crate::error::{Error, Result};
use crate::types::{LatentTextEmbedding, Prompt, TokenId};

/// Conditioning of the zero-step model: the mean-pooled embedding.
pub fn zero_step_features(c: &LatentTextEmbedding) -> Vec<f64> {
    c.mean_pool()
}

/// Conditioning of the corrector: `[pool(c), pool(ĉ), pool(c) - pool(ĉ)]`.
pub fn corrector_features(c: &LatentTextEmbedding, hyp: &LatentTextEmbedding) -> Result<Vec<f64>> {
    c.check_same_shape(hyp)?;
    let a = c.mean_pool();
    let b = hyp.mean_pool();
    let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    let mut out = a;
    out.extend(b);
    out.extend(diff);
    Ok(out)
}

fn check_dims(model: &SequenceModel, c: &LatentTextEmbedding) -> Result<()> {
    if c.embed_dim() != model.dims().embed_dim {
        return Err(Error::shape(
            alloc::format!("embed dim {}", model.dims().embed_dim),
            alloc::format!("{}", c.embed_dim()),
        ));
    }
    Ok(())
}

/// Greedy decode of the zero-step model, returned as raw ids.
pub fn zero_step_generate(model: &SequenceModel, c: &LatentTextEmbedding, max_len: usize) -> Result<Prompt> {
    if model.role() != ModelRole::ZeroStep {
        return Err(Error::InvalidConfig("expected a zero-step model".into()));
    }
    check_dims(model, c)?;
    let cond = model.condition(&zero_step_features(c), None)?;
    Ok(Prompt::from_parts("", model.greedy(&cond, max_len)))
}

/// Both sequence models plus the text encoder used to re-embed hypotheses.
#[derive(Clone, Debug)]
pub struct E2TBundle<E> {
    zero_step: SequenceModel,
    corrector: SequenceModel,
    encoder: E,
}

/// Instrumented result of [`E2TBundle::invert_traced`].
#[derive(Clone, Debug, PartialEq)]
pub struct E2TInversion {
    pub prompt: Prompt,
    pub distance: f64,
    /// Best `‖T(x) - c‖` seen after the zero-step hypothesis and after each
    /// correction step; `steps + 1` entries.
    pub best_distances: Vec<f64>,
}

impl<E: TextEncoder> E2TBundle<E> {
    pub fn new(zero_step: SequenceModel, corrector: SequenceModel, encoder: E) -> Result<Self> {
        if zero_step.role() != ModelRole::ZeroStep || corrector.role() != ModelRole::Corrector {
            return Err(Error::InvalidConfig("model roles are swapped".into()));
        }
        let v = encoder.tokenizer().vocab_size();
        let d = encoder.embed_dim();
        for m in [&zero_step, &corrector] {
            if m.dims().vocab_size != v {
                return Err(Error::shape(alloc::format!("vocab size {v}"), alloc::format!("{}", m.dims().vocab_size)));
            }
            if m.dims().embed_dim != d {
                return Err(Error::shape(alloc::format!("embed dim {d}"), alloc::format!("{}", m.dims().embed_dim)));
            }
        }
        Ok(Self {
            zero_step,
            corrector,
            encoder,
        })
    }

    pub fn zero_step(&self) -> &SequenceModel {
        &self.zero_step
    }

    pub fn corrector(&self) -> &SequenceModel {
        &self.corrector
    }

    pub fn encoder(&self) -> &E {
        &self.encoder
    }

    /// Longest prompt either decoder may emit.
    pub fn max_len(&self) -> usize {
        self.zero_step.max_len().min(self.encoder.seq_len())
    }

    fn finish(&self, ids: &[TokenId]) -> Result<Prompt> {
        self.encoder.tokenizer().prompt_from_ids(ids)
    }

    /// Zero-step hypothesis as a tokenized prompt.
    pub fn zero_step_generate(&self, c: &LatentTextEmbedding) -> Result<Prompt> {
        let raw = zero_step_generate(&self.zero_step, c, self.max_len())?;
        self.finish(raw.token_ids())
    }

    /// Corrector conditioning for hypothesis `hyp` against target `c`.
    pub fn corrector_conditioning(
        &self,
        c: &LatentTextEmbedding,
        hyp: &[TokenId],
        hyp_embedding: &LatentTextEmbedding,
    ) -> Result<Conditioning> {
        let f = corrector_features(c, hyp_embedding)?;
        self.corrector.condition(&f, Some(hyp))
    }

    pub fn invert_embedding(&self, c: &LatentTextEmbedding, beam_width: usize, steps: usize) -> Result<Prompt> {
        self.invert_traced(c, beam_width, steps).map(|r| r.prompt)
    }

    pub fn invert_traced(&self, c: &LatentTextEmbedding, beam_width: usize, steps: usize) -> Result<E2TInversion> {
        if beam_width == 0 {
            return Err(Error::InvalidConfig("beam_width must be at least 1".into()));
        }
        check_dims(&self.zero_step, c)?;
        let max_len = self.max_len();
        let mut cache: BTreeMap<Vec<TokenId>, (f64, LatentTextEmbedding)> = BTreeMap::new();
        let mut score = |ids: &[TokenId]| -> Result<(f64, LatentTextEmbedding)> {
            if let Some(hit) = cache.get(ids) {
                return Ok(hit.clone());
            }
            let emb = self.encoder.encode_text(&self.finish(ids)?)?;
            let d = emb.distance(c)?;
            cache.insert(ids.to_vec(), (d, emb.clone()));
            Ok((d, emb))
        };

        let first = zero_step_generate(&self.zero_step, c, max_len)?.token_ids().to_vec();
        let (d0, e0) = score(&first)?;
        let mut beam: Vec<(f64, Vec<TokenId>, LatentTextEmbedding)> = alloc::vec![(d0, first, e0)];
        let mut best_distances = alloc::vec![d0];
        for _ in 0..steps {
            let mut pool: BTreeMap<Vec<TokenId>, f64> = BTreeMap::new();
            for (d, ids, emb) in &beam {
                pool.insert(ids.clone(), *d);
                let cond = self.corrector_conditioning(c, ids, emb)?;
                for (cand, _) in self.corrector.beam(&cond, beam_width, max_len) {
                    if !pool.contains_key(&cand) {
                        let (dc, _) = score(&cand)?;
                        pool.insert(cand, dc);
                    }
                }
            }
            let mut ranked: Vec<(f64, Vec<TokenId>)> = pool.into_iter().map(|(k, d)| (d, k)).collect();
            ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
            ranked.truncate(beam_width);
            beam = ranked
                .into_iter()
                .map(|(d, ids)| {
                    let (_, emb) = score(&ids)?;
                    Ok((d, ids, emb))
                })
                .collect::<Result<_>>()?;
            best_distances.push(beam[0].0);
        }
        let (distance, ids, _) = beam.swap_remove(0);
        Ok(E2TInversion {
            prompt: self.finish(&ids)?,
            distance,
            best_distances,
        })
    }
}
