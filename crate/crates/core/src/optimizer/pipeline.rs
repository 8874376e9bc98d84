use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::refine::{check_steps, refine_embedding_observed, EpochRecord};
use crate::backend::{DiffusionBackend, TextEncoder};
use crate::captioner::{caption, CaptionProvider};
use crate::e2t::E2TBundle;
use crate::error::{Error, Result};
use crate::types::{ImageTensor, InversionConfig, InversionResult, LatentTextEmbedding};

/// Seconds since some fixed origin. Core has no clock of its own.
pub trait Clock {
    fn now_s(&self) -> f64;
}

/// Always reads zero, so recorded wall times are zero.
#[derive(Clone, Copy, Debug, Default)]
pub struct NullClock;

impl Clock for NullClock {
    fn now_s(&self) -> f64 {
        0.0
    }
}

/// Stage names attached to pipeline errors.
pub mod stage {
    pub const CONFIG: &str = "config";
    pub const CAPTION: &str = "caption";
    pub const ENCODE: &str = "encode";
    pub const REFINE: &str = "refine";
    pub const E2T: &str = "e2t";
}

/// Caption, encode, refine, decode.
pub fn invert<B, E>(
    backend: &B,
    captioner: &(impl CaptionProvider + ?Sized),
    e2t: &E2TBundle<E>,
    target: &ImageTensor,
    cfg: &InversionConfig,
    clock: &dyn Clock,
) -> Result<InversionResult>
where
    B: DiffusionBackend + ?Sized,
    E: TextEncoder,
{
    invert_observed(backend, captioner, e2t, target, cfg, clock, &mut |_| {})
}

pub fn invert_observed<B, E>(
    backend: &B,
    captioner: &(impl CaptionProvider + ?Sized),
    e2t: &E2TBundle<E>,
    target: &ImageTensor,
    cfg: &InversionConfig,
    clock: &dyn Clock,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<InversionResult>
where
    B: DiffusionBackend + ?Sized,
    E: TextEncoder,
{
    let start = clock.now_s();
    cfg.validate()
        .and_then(|_| check_steps(backend, cfg))
        .map_err(|e| e.in_stage(stage::CONFIG))?;
    let initial_prompt = caption(captioner, backend.tokenizer(), target, cfg.init_prompt_len)
        .map_err(|e| e.in_stage(stage::CAPTION))?;
    let c0 = backend
        .encode_text(&initial_prompt)
        .map_err(|e| e.in_stage(stage::ENCODE))?;
    let noise = backend.noise_spec(cfg.noise_seed);
    let (embedding, trace) = refine_embedding_observed(backend, &c0, &noise, target, cfg, on_epoch)
        .map_err(|e| e.in_stage(stage::REFINE))?;
    let prompt = e2t
        .invert_embedding(&embedding, cfg.beam_width, cfg.correction_steps)
        .map_err(|e| e.in_stage(stage::E2T))?;
    Ok(InversionResult {
        initial_prompt,
        prompt,
        embedding,
        loss_trace: trace.losses,
        wall_time_s: clock.now_s() - start,
        config: cfg.clone(),
    })
}

/// Population standard deviation over every entry of `embeddings`.
pub fn empirical_std(embeddings: &[LatentTextEmbedding]) -> Result<f64> {
    let values: Vec<f64> = embeddings.iter().flat_map(|c| c.as_slice().iter().copied()).collect();
    if values.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    Ok(libm::sqrt(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n))
}

/// I.i.d. `N(0, std²)` entries, for the random-initialization ablation.
pub fn random_embedding(seq_len: usize, embed_dim: usize, std: f64, seed: u64) -> Result<LatentTextEmbedding> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..seq_len * embed_dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * std
        })
        .collect();
    LatentTextEmbedding::new(seq_len, embed_dim, values)
}
