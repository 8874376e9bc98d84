//! Analytic stand-in for a latent diffusion model.
//!
//! Every stage is affine, so generation and its gradient have closed forms:
//!
//! * `T`: embedding lookup, then prefix-mean mixing (row `i` of `c` is the
//!   mean of embedded tokens `0..=i`).
//! * denoiser: `eps(z, t, c) = A z + B pool(c) + b_t` with `A = I + G`,
//!   `||G||_F = 0.5`, so `||I - alpha A||_2 < 1` for every `alpha` in `(0, 1]`.
//! * `D(z) = W z + 0.5`, `E(x) = W⁺ (x - 0.5)`.

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{noise_from_spec, DiffusionBackend, HardPromptBackend, NoiseSchedule, TextEncoder};
use crate::error::{Error, Result};
use crate::linalg::{axpy, Matrix};
use crate::optimizer::VocabEmbeddingTable;
use crate::tokenizer::{Tokenizer, Vocabulary};
use crate::types::{
    ImageTensor, LatentImage, LatentShape, LatentTextEmbedding, LossKind, NoiseSpec, Prompt,
    MAX_TOKENS,
};

const DRIFT_FROBENIUS: f64 = 0.5;
const COND_STD: f64 = 1.0;
const BIAS_STD: f64 = 0.05;
const DECODER_STD: f64 = 0.06;
const DECODER_OFFSET: f64 = 0.5;
const PINV_EPS: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyBackendSpec {
    pub seed: u64,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub seq_len: usize,
    pub latent: LatentShape,
    pub image_height: usize,
    pub image_width: usize,
    pub denoise_steps: usize,
    pub alpha: f64,
}

impl Default for ToyBackendSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            vocab_size: 64,
            embed_dim: 16,
            seq_len: 16,
            latent: LatentShape::new(4, 4, 4),
            image_height: 8,
            image_width: 8,
            denoise_steps: 5,
            alpha: 0.3,
        }
    }
}

impl ToyBackendSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("seq_len", self.seq_len),
            ("latent.channels", self.latent.channels),
            ("latent.height", self.latent.height),
            ("latent.width", self.latent.width),
            ("image_height", self.image_height),
            ("image_width", self.image_width),
            ("denoise_steps", self.denoise_steps),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
        }
        if self.seq_len > MAX_TOKENS {
            return Err(Error::InvalidConfig(format!(
                "seq_len {} exceeds {MAX_TOKENS}",
                self.seq_len
            )));
        }
        let overflow = || Error::InvalidConfig("dimension overflow".into());
        let latent = self
            .latent
            .channels
            .checked_mul(self.latent.height)
            .and_then(|n| n.checked_mul(self.latent.width))
            .ok_or_else(overflow)?;
        let pixels = self
            .image_height
            .checked_mul(self.image_width)
            .and_then(|n| n.checked_mul(3))
            .ok_or_else(overflow)?;
        // Guard the dense parameter allocations.
        const MAX_ELEMS: usize = 1 << 26;
        for n in [
            latent.checked_mul(latent),
            pixels.checked_mul(latent),
            self.vocab_size.checked_mul(self.embed_dim),
        ] {
            if n.is_none_or(|n| n > MAX_ELEMS) {
                return Err(overflow());
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ToyBackend {
    spec: ToyBackendSpec,
    vocab: Vocabulary,
    table: VocabEmbeddingTable,
    schedule: NoiseSchedule,
    /// `A`, `m × m`
    drift: Matrix,
    /// `B`, `m × d`
    cond: Matrix,
    /// `b_t` per step, application order
    step_bias: Vec<Vec<f64>>,
    /// `W`, `P × m`
    decoder: Matrix,
    /// `W⁺`, `m × P`
    encoder: Matrix,
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z * std
    })
}

impl ToyBackend {
    pub fn new(spec: ToyBackendSpec) -> Result<Self> {
        spec.validate()?;
        let vocab = Vocabulary::toy(spec.vocab_size)?;
        let schedule = NoiseSchedule::constant(spec.alpha, spec.denoise_steps)?;
        let m = spec.latent.numel();
        let d = spec.embed_dim;
        let pixels = 3 * spec.image_height * spec.image_width;

        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let table = VocabEmbeddingTable::new(normal_matrix(&mut rng, spec.vocab_size, d, 1.0))?;

        let g = normal_matrix(&mut rng, m, m, 1.0);
        let g_scale = DRIFT_FROBENIUS / g.frobenius_norm().max(f64::MIN_POSITIVE);
        let drift = Matrix::from_fn(m, m, |r, c| {
            g.get(r, c) * g_scale + if r == c { 1.0 } else { 0.0 }
        });

        let cond = normal_matrix(&mut rng, m, d, COND_STD / libm::sqrt(d as f64));
        let step_bias = (0..spec.denoise_steps)
            .map(|_| normal_matrix(&mut rng, 1, m, BIAS_STD).as_slice().to_vec())
            .collect();
        let decoder = normal_matrix(&mut rng, pixels, m, DECODER_STD);
        let encoder = decoder
            .to_nalgebra()
            .pseudo_inverse(PINV_EPS)
            .map_err(|e| Error::InvalidConfig(format!("decoder pseudoinverse: {e}")))?;
        let encoder = Matrix::from_nalgebra(&encoder);

        Ok(Self {
            spec,
            vocab,
            table,
            schedule,
            drift,
            cond,
            step_bias,
            decoder,
            encoder,
        })
    }

    /// Replace the schedule (same length required).
    pub fn with_schedule(mut self, schedule: NoiseSchedule) -> Result<Self> {
        if schedule.len() != self.schedule.len() {
            return Err(Error::shape(
                format!("{} steps", self.schedule.len()),
                format!("{} steps", schedule.len()),
            ));
        }
        self.schedule = schedule;
        Ok(self)
    }

    pub fn spec(&self) -> &ToyBackendSpec {
        &self.spec
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn drift(&self) -> &Matrix {
        &self.drift
    }

    pub fn cond_weight(&self) -> &Matrix {
        &self.cond
    }

    pub fn step_bias(&self) -> &[Vec<f64>] {
        &self.step_bias
    }

    pub fn decoder_weight(&self) -> &Matrix {
        &self.decoder
    }

    pub fn decoder_offset(&self) -> f64 {
        DECODER_OFFSET
    }

    fn check_embedding(&self, c: &LatentTextEmbedding) -> Result<()> {
        if c.shape() != (self.spec.seq_len, self.spec.embed_dim) {
            return Err(Error::shape(
                format!("{}x{}", self.spec.seq_len, self.spec.embed_dim),
                format!("{}x{}", c.seq_len(), c.embed_dim()),
            ));
        }
        Ok(())
    }

    fn check_noise(&self, n: &NoiseSpec) -> Result<()> {
        if n.shape != self.spec.latent {
            return Err(Error::shape(
                format!("{:?}", self.spec.latent),
                format!("{:?}", n.shape),
            ));
        }
        Ok(())
    }

    fn check_target(&self, x: &ImageTensor) -> Result<()> {
        if (x.height(), x.width()) != (self.spec.image_height, self.spec.image_width) {
            return Err(Error::shape(
                format!("3x{}x{}", self.spec.image_height, self.spec.image_width),
                format!("3x{}x{}", x.height(), x.width()),
            ));
        }
        Ok(())
    }

    fn prefix_mean(&self, rows: &Matrix) -> Result<LatentTextEmbedding> {
        let d = self.spec.embed_dim;
        let mut out = Vec::with_capacity(rows.rows() * d);
        let mut running = alloc::vec![0.0; d];
        for i in 0..rows.rows() {
            axpy(1.0, rows.row(i), &mut running);
            let inv = 1.0 / (i + 1) as f64;
            out.extend(running.iter().map(|v| v * inv));
        }
        LatentTextEmbedding::new(rows.rows(), d, out)
    }

    /// Final latent `z_0` of the denoising loop.
    fn denoise(&self, pooled: &[f64], noise: &NoiseSpec) -> Vec<f64> {
        let m = self.spec.latent.numel();
        let mut z = noise_from_spec(noise).as_slice().to_vec();
        let cond_term = self.cond.matvec(pooled);
        let mut eps = alloc::vec![0.0; m];
        for (alpha, bias) in self.schedule.alphas().iter().zip(&self.step_bias) {
            self.drift.matvec_into(&z, &mut eps);
            for i in 0..m {
                z[i] -= alpha * (eps[i] + cond_term[i] + bias[i]);
            }
        }
        z
    }

    fn decode_raw(&self, z: &[f64]) -> Vec<f64> {
        let mut x = self.decoder.matvec(z);
        x.iter_mut().for_each(|v| *v += DECODER_OFFSET);
        x
    }

    fn encode_raw(&self, x: &[f64]) -> Vec<f64> {
        let centered: Vec<f64> = x.iter().map(|v| v - DECODER_OFFSET).collect();
        self.encoder.matvec(&centered)
    }

    fn image_from_raw(&self, raw: Vec<f64>) -> Result<ImageTensor> {
        ImageTensor::from_unclamped(self.spec.image_height, self.spec.image_width, raw)
    }

    /// `dz_0 / d pool(c)`: the `m × d` matrix mapping the pooled conditioning
    /// to the final latent.
    pub fn conditioning_jacobian(&self) -> Matrix {
        let m = self.spec.latent.numel();
        let d = self.spec.embed_dim;
        let mut k = Matrix::zeros(m, d);
        for &alpha in self.schedule.alphas() {
            let drifted = self.drift.matmul(&k);
            let next = k.as_mut_slice();
            for (i, v) in next.iter_mut().enumerate() {
                *v = *v - alpha * drifted.as_slice()[i] - alpha * self.cond.as_slice()[i];
            }
        }
        k
    }

    /// Largest eigenvalue of the latent-SSE Hessian with respect to `c`.
    /// Plain gradient descent with `lr < 1 / λ` decreases that loss
    /// monotonically.
    pub fn latent_hessian_max_eigenvalue(&self) -> f64 {
        let sigma = self.conditioning_jacobian().spectral_norm();
        2.0 * sigma * sigma / self.spec.seq_len as f64
    }

    fn backprop_chain(&self, grad_z0: &[f64]) -> Vec<f64> {
        let m = self.spec.latent.numel();
        let mut g = grad_z0.to_vec();
        let mut grad_pooled = alloc::vec![0.0; self.spec.embed_dim];
        let mut drift_t = alloc::vec![0.0; m];
        for &alpha in self.schedule.alphas().iter().rev() {
            self.cond.matvec_t_acc(&g, -alpha, &mut grad_pooled);
            drift_t.iter_mut().for_each(|v| *v = 0.0);
            self.drift.matvec_t_acc(&g, 1.0, &mut drift_t);
            for i in 0..m {
                g[i] -= alpha * drift_t[i];
            }
        }
        grad_pooled
    }

    fn loss_terms(
        &self,
        c: &LatentTextEmbedding,
        noise: &NoiseSpec,
        target: &ImageTensor,
        kind: LossKind,
        with_grad: bool,
    ) -> Result<(f64, Option<Matrix>)> {
        self.check_embedding(c)?;
        self.check_noise(noise)?;
        self.check_target(target)?;
        let z0 = self.denoise(&c.mean_pool(), noise);
        let (loss, grad_z0) = match kind {
            LossKind::PixelSse => {
                let raw = self.decode_raw(&z0);
                let mut loss = 0.0;
                let mut grad_raw = alloc::vec![0.0; raw.len()];
                for ((g, &r), &y) in grad_raw.iter_mut().zip(&raw).zip(target.pixels()) {
                    let diff = r.clamp(0.0, 1.0) - y;
                    loss += diff * diff;
                    if r > 0.0 && r < 1.0 {
                        *g = 2.0 * diff;
                    }
                }
                (loss, with_grad.then(|| self.decoder.matvec_t(&grad_raw)))
            }
            LossKind::LatentSse => {
                let goal = self.encode_raw(target.pixels());
                let resid: Vec<f64> = z0.iter().zip(&goal).map(|(a, b)| a - b).collect();
                let loss = resid.iter().map(|r| r * r).sum();
                (loss, with_grad.then(|| resid.iter().map(|r| 2.0 * r).collect()))
            }
        };
        let grad = grad_z0.map(|gz| {
            let gp = self.backprop_chain(&gz);
            let inv = 1.0 / self.spec.seq_len as f64;
            Matrix::from_fn(self.spec.seq_len, self.spec.embed_dim, |_, j| gp[j] * inv)
        });
        Ok((loss, grad))
    }
}

impl TextEncoder for ToyBackend {
    fn tokenizer(&self) -> &dyn Tokenizer {
        &self.vocab
    }

    fn seq_len(&self) -> usize {
        self.spec.seq_len
    }

    fn embed_dim(&self) -> usize {
        self.spec.embed_dim
    }

    fn encode_text(&self, prompt: &Prompt) -> Result<LatentTextEmbedding> {
        let ids = prompt.token_ids();
        if ids.len() > self.spec.seq_len {
            return Err(Error::PromptTooLong {
                len: ids.len(),
                max: self.spec.seq_len,
            });
        }
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= self.spec.vocab_size) {
            return Err(Error::OutOfVocabulary {
                id,
                vocab_size: self.spec.vocab_size,
            });
        }
        let pad = self.vocab.pad_id();
        let rows = Matrix::from_fn(self.spec.seq_len, self.spec.embed_dim, |i, j| {
            let id = ids.get(i).copied().unwrap_or(pad);
            self.table.row(id)[j]
        });
        self.prefix_mean(&rows)
    }
}

impl DiffusionBackend for ToyBackend {
    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn latent_shape(&self) -> LatentShape {
        self.spec.latent
    }

    fn image_dims(&self) -> (usize, usize) {
        (self.spec.image_height, self.spec.image_width)
    }

    fn encode_image(&self, x: &ImageTensor) -> Result<LatentImage> {
        self.check_target(x)?;
        LatentImage::new(self.spec.latent, self.encode_raw(x.pixels()))
    }

    fn decode_latent(&self, z: &LatentImage) -> Result<ImageTensor> {
        if z.shape() != self.spec.latent {
            return Err(Error::shape(
                format!("{:?}", self.spec.latent),
                format!("{:?}", z.shape()),
            ));
        }
        self.image_from_raw(self.decode_raw(z.as_slice()))
    }

    fn generate(
        &self,
        c: &LatentTextEmbedding,
        noise: &NoiseSpec,
        steps: usize,
    ) -> Result<ImageTensor> {
        self.check_embedding(c)?;
        self.check_noise(noise)?;
        if steps != self.schedule.len() {
            return Err(Error::shape(
                format!("{} denoising steps", self.schedule.len()),
                format!("{steps}"),
            ));
        }
        let z0 = self.denoise(&c.mean_pool(), noise);
        self.image_from_raw(self.decode_raw(&z0))
    }

    fn reconstruction_loss(
        &self,
        c: &LatentTextEmbedding,
        noise: &NoiseSpec,
        target: &ImageTensor,
        kind: LossKind,
    ) -> Result<f64> {
        self.loss_terms(c, noise, target, kind, false).map(|(l, _)| l)
    }

    fn loss_and_gradient(
        &self,
        c: &LatentTextEmbedding,
        noise: &NoiseSpec,
        target: &ImageTensor,
        kind: LossKind,
    ) -> Result<(f64, Matrix)> {
        let (loss, grad) = self.loss_terms(c, noise, target, kind, true)?;
        Ok((loss, grad.expect("gradient requested")))
    }

    fn parameter_digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for w in self.vocab.words() {
            h.update(w.as_bytes());
            h.update([0u8]);
        }
        let mats = [
            self.table.matrix(),
            &self.drift,
            &self.cond,
            &self.decoder,
            &self.encoder,
        ];
        for m in mats {
            for v in m.as_slice() {
                h.update(v.to_le_bytes());
            }
        }
        for b in &self.step_bias {
            for v in b {
                h.update(v.to_le_bytes());
            }
        }
        for a in self.schedule.alphas() {
            h.update(a.to_le_bytes());
        }
        h.finalize().into()
    }
}

impl HardPromptBackend for ToyBackend {
    fn vocab_table(&self) -> &VocabEmbeddingTable {
        &self.table
    }

    fn encode_token_embeddings(&self, rows: &Matrix) -> Result<LatentTextEmbedding> {
        if (rows.rows(), rows.cols()) != (self.spec.seq_len, self.spec.embed_dim) {
            return Err(Error::shape(
                format!("{}x{}", self.spec.seq_len, self.spec.embed_dim),
                format!("{}x{}", rows.rows(), rows.cols()),
            ));
        }
        self.prefix_mean(rows)
    }

    fn encoder_backward(&self, grad_c: &Matrix) -> Result<Matrix> {
        let (l, d) = (self.spec.seq_len, self.spec.embed_dim);
        if (grad_c.rows(), grad_c.cols()) != (l, d) {
            return Err(Error::shape(
                format!("{l}x{d}"),
                format!("{}x{}", grad_c.rows(), grad_c.cols()),
            ));
        }
        // d c_i / d e_j = 1/(i+1) for j <= i: a suffix sum of scaled rows.
        let mut out = Matrix::zeros(l, d);
        let mut suffix = alloc::vec![0.0; d];
        for i in (0..l).rev() {
            axpy(1.0 / (i + 1) as f64, grad_c.row(i), &mut suffix);
            out.as_mut_slice()[i * d..(i + 1) * d].copy_from_slice(&suffix);
        }
        Ok(out)
    }
}

/// Build the analytic toy backend described by `spec`.
pub fn make_toy_backend(spec: ToyBackendSpec) -> Result<ToyBackend> {
    ToyBackend::new(spec)
}
