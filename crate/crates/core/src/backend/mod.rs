//! Latent diffusion backend contract.
//!
//! A backend bundles the text encoder `T`, the conditional denoiser, the image
//! encoder/decoder pair and a noise schedule. Generation follows the linear
//! update `z_{t-1} = z_t - eps(z_t, t, c) * alpha_t` for `t = steps..1` and
//! decodes `z_0`. Backends must also provide the reconstruction loss and its
//! gradient with respect to `c`; how they obtain it is up to them.
//!
//! Parameters are fixed for the lifetime of a backend. Every method takes
//! `&self`, so concurrent calls on one backend are safe.

mod toy;

pub use toy::{make_toy_backend, ToyBackend, ToyBackendSpec};

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::optimizer::VocabEmbeddingTable;
use crate::tokenizer::Tokenizer;
use crate::types::{
    ImageTensor, LatentImage, LatentShape, LatentTextEmbedding, LossKind, NoiseSpec, Prompt,
};

/// Per-step scaling factors, stored in application order (`alpha_steps`
/// first, `alpha_1` last).
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    alphas: Vec<f64>,
}

impl NoiseSchedule {
    /// Every alpha must lie in `[0, 1]`. Zero is allowed and turns a step
    /// into the identity.
    pub fn new(alphas: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::InvalidConfig("empty noise schedule".into()));
        }
        if let Some(a) = alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::InvalidConfig(format!("alpha {a} outside [0, 1]")));
        }
        Ok(Self { alphas })
    }

    pub fn constant(alpha: f64, steps: usize) -> Result<Self> {
        Self::new(alloc::vec![alpha; steps])
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }
}

/// Expand a noise spec into a standard-normal latent. Same spec, same bits.
pub fn noise_from_spec(spec: &NoiseSpec) -> LatentImage {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let values = (0..spec.shape.numel())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    LatentImage::new(spec.shape, values).expect("normal samples are finite")
}

/// The text encoder `T` and its tokenizer.
pub trait TextEncoder: Send + Sync {
    fn tokenizer(&self) -> &dyn Tokenizer;

    /// Sequence length `L` of every encoding; prompts are padded to it.
    fn seq_len(&self) -> usize;

    fn embed_dim(&self) -> usize;

    fn encode_text(&self, prompt: &Prompt) -> Result<LatentTextEmbedding>;
}

impl<T: TextEncoder + ?Sized> TextEncoder for &T {
    fn tokenizer(&self) -> &dyn Tokenizer {
        (**self).tokenizer()
    }

    fn seq_len(&self) -> usize {
        (**self).seq_len()
    }

    fn embed_dim(&self) -> usize {
        (**self).embed_dim()
    }

    fn encode_text(&self, prompt: &Prompt) -> Result<LatentTextEmbedding> {
        (**self).encode_text(prompt)
    }
}

pub trait DiffusionBackend: TextEncoder {
    fn schedule(&self) -> &NoiseSchedule;

    fn latent_shape(&self) -> LatentShape;

    /// Output `(height, width)`; images always have three channels.
    fn image_dims(&self) -> (usize, usize);

    fn noise_spec(&self, seed: u64) -> NoiseSpec {
        NoiseSpec {
            seed,
            shape: self.latent_shape(),
        }
    }

    fn encode_image(&self, x: &ImageTensor) -> Result<LatentImage>;

    fn decode_latent(&self, z: &LatentImage) -> Result<ImageTensor>;

    fn generate(&self, c: &LatentTextEmbedding, noise: &NoiseSpec, steps: usize)
        -> Result<ImageTensor>;

    fn reconstruction_loss(
        &self,
        c: &LatentTextEmbedding,
        noise: &NoiseSpec,
        target: &ImageTensor,
        kind: LossKind,
    ) -> Result<f64>;

    /// Loss together with `dL/dc`, shaped like `c`.
    fn loss_and_gradient(
        &self,
        c: &LatentTextEmbedding,
        noise: &NoiseSpec,
        target: &ImageTensor,
        kind: LossKind,
    ) -> Result<(f64, Matrix)>;

    fn loss_gradient(
        &self,
        c: &LatentTextEmbedding,
        noise: &NoiseSpec,
        target: &ImageTensor,
        kind: LossKind,
    ) -> Result<Matrix> {
        self.loss_and_gradient(c, noise, target, kind).map(|(_, g)| g)
    }

    /// Digest of every model parameter. Toolkit operations never change it.
    fn parameter_digest(&self) -> [u8; 32];
}

/// Extra surface needed by the discrete (hard prompt) baseline: the
/// pre-encoder token table and the encoder's vector-Jacobian product.
pub trait HardPromptBackend: DiffusionBackend {
    fn vocab_table(&self) -> &VocabEmbeddingTable;

    /// Encode `L` pre-encoder rows (row-major `L × d`) as if they were token
    /// embeddings.
    fn encode_token_embeddings(&self, rows: &Matrix) -> Result<LatentTextEmbedding>;

    /// Pull `dL/dc` back to `dL/d(rows)`.
    fn encoder_backward(&self, grad_c: &Matrix) -> Result<Matrix>;
}
