use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::projection::project_to_vocab;
use super::refine::check_steps;
use crate::backend::HardPromptBackend;
use crate::error::{Error, Result};
use crate::linalg::{axpy, Matrix};
use crate::types::{ImageTensor, InversionConfig, Prompt, TokenId};

/// Starting point of the free vectors.
#[derive(Clone, Debug, PartialEq)]
pub enum DiscreteInit {
    /// Vocabulary rows of this prompt, padded to `L`.
    Prompt(Prompt),
    /// A uniformly random token per position.
    Random { seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteResult {
    /// Final projection with padding removed.
    pub prompt: Prompt,
    /// Final projection, all `L` positions.
    pub token_ids: Vec<TokenId>,
    /// Loss of the projected prompt at each epoch; `max_epoch + 1` entries.
    pub loss_trace: Vec<f64>,
}

/// Delayed-projection baseline: keep `L` free pre-encoder vectors, score the
/// nearest-vocabulary projection, and push the gradient straight through to
/// the free vectors.
pub fn discrete_invert(
    backend: &(impl HardPromptBackend + ?Sized),
    target: &ImageTensor,
    cfg: &InversionConfig,
    init: &DiscreteInit,
) -> Result<DiscreteResult> {
    cfg.validate()?;
    check_steps(backend, cfg)?;
    let table = backend.vocab_table();
    let (l, d) = (backend.seq_len(), table.embed_dim());
    let pad = backend.tokenizer().pad_id();
    let start_ids: Vec<TokenId> = match init {
        DiscreteInit::Prompt(p) => {
            if p.len() > l {
                return Err(Error::PromptTooLong { len: p.len(), max: l });
            }
            if let Some(&id) = p.token_ids().iter().find(|&&id| id as usize >= table.vocab_size()) {
                return Err(Error::OutOfVocabulary {
                    id,
                    vocab_size: table.vocab_size(),
                });
            }
            let mut ids = p.token_ids().to_vec();
            ids.resize(l, pad);
            ids
        }
        DiscreteInit::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            (0..l)
                .map(|_| rng.random_range(0..table.vocab_size()) as TokenId)
                .collect()
        }
    };
    let mut free = Matrix::from_fn(l, d, |i, j| table.row(start_ids[i])[j]);
    let noise = backend.noise_spec(cfg.noise_seed);
    let mut loss_trace = Vec::with_capacity(cfg.max_epoch + 1);
    let mut ids = Vec::with_capacity(l);
    for epoch in 0..=cfg.max_epoch {
        ids.clear();
        for i in 0..l {
            ids.push(project_to_vocab(free.row(i), table)?);
        }
        let projected = Matrix::from_fn(l, d, |i, j| table.row(ids[i])[j]);
        let c = backend.encode_token_embeddings(&projected)?;
        let (loss, grad) = backend.loss_and_gradient(&c, &noise, target, cfg.loss_kind)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite { what: "loss", epoch });
        }
        loss_trace.push(loss);
        if epoch == cfg.max_epoch {
            break;
        }
        let grad_rows = backend.encoder_backward(&grad)?;
        axpy(-cfg.learning_rate, grad_rows.as_slice(), free.as_mut_slice());
        if free.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "free vectors",
                epoch,
            });
        }
    }
    Ok(DiscreteResult {
        prompt: backend.tokenizer().prompt_from_ids(&ids)?,
        token_ids: ids,
        loss_trace,
    })
}
