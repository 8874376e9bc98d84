//! Domain types shared by every stage of the pipeline.
//!
//! All of these are plain values: once built they are only read, so they can
//! be shared freely across threads.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Index into a tokenizer vocabulary.
pub type TokenId = u32;

/// Longest token sequence any encoder in the toolkit accepts.
pub const MAX_TOKENS: usize = 32;

/// Lowercase the text and collapse whitespace runs to single spaces.
pub fn normalize_text(text: &str) -> String {
    let lower = text.to_lowercase();
    let mut out = String::with_capacity(lower.len());
    for word in lower.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// A prompt: normalized text together with its (unpadded) token ids.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Prompt {
    text: String,
    token_ids: Vec<TokenId>,
}

impl Prompt {
    /// Pairs text with ids. Callers are expected to go through a
    /// [`Tokenizer`](crate::tokenizer::Tokenizer) so the two agree.
    pub fn from_parts(text: impl Into<String>, token_ids: Vec<TokenId>) -> Self {
        Self {
            text: text.into(),
            token_ids,
        }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn token_ids(&self) -> &[TokenId] {
        &self.token_ids
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.text.split(' ').filter(|w| !w.is_empty())
    }
}

impl core::fmt::Display for Prompt {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(&self.text)
    }
}

/// The post-encoder text embedding `c`: an `L × d` row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTextEmbedding {
    seq_len: usize,
    embed_dim: usize,
    values: Vec<f64>,
}

impl LatentTextEmbedding {
    pub fn new(seq_len: usize, embed_dim: usize, values: Vec<f64>) -> Result<Self> {
        if seq_len == 0 || embed_dim == 0 {
            return Err(Error::shape("non-empty embedding", format!("{seq_len}x{embed_dim}")));
        }
        if seq_len > MAX_TOKENS {
            return Err(Error::PromptTooLong {
                len: seq_len,
                max: MAX_TOKENS,
            });
        }
        if values.len() != seq_len * embed_dim {
            return Err(Error::shape(
                format!("{} values", seq_len * embed_dim),
                format!("{}", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue("latent text embedding"));
        }
        Ok(Self {
            seq_len,
            embed_dim,
            values,
        })
    }

    pub fn zeros(seq_len: usize, embed_dim: usize) -> Result<Self> {
        Self::new(seq_len, embed_dim, alloc::vec![0.0; seq_len * embed_dim])
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.seq_len, self.embed_dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::new(self.seq_len, self.embed_dim, self.values.clone()).expect("shape checked")
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.embed_dim..(i + 1) * self.embed_dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.embed_dim)
    }

    /// Column means over the sequence axis.
    pub fn mean_pool(&self) -> Vec<f64> {
        let mut pooled = alloc::vec![0.0; self.embed_dim];
        for row in self.rows() {
            for (p, v) in pooled.iter_mut().zip(row) {
                *p += v;
            }
        }
        let inv = 1.0 / self.seq_len as f64;
        pooled.iter_mut().for_each(|p| *p *= inv);
        pooled
    }

    /// Frobenius norm of `self - other`.
    pub fn distance(&self, other: &Self) -> Result<f64> {
        self.check_same_shape(other)?;
        let sq: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(libm::sqrt(sq))
    }

    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(self.values.iter().map(|v| v * v).sum())
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                format!("{}x{}", self.seq_len, self.embed_dim),
                format!("{}x{}", other.seq_len, other.embed_dim),
            ));
        }
        Ok(())
    }

    /// `self -= step * direction`. Leaves finiteness to the caller to check.
    pub(crate) fn descend(&mut self, step: f64, direction: &Matrix) {
        for (v, g) in self.values.iter_mut().zip(direction.as_slice()) {
            *v -= step * g;
        }
    }

    pub(crate) fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// An RGB image, channel-major (`3 × H × W`), every value in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl ImageTensor {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != Self::CHANNELS * height * width {
            return Err(Error::shape(
                format!("3x{height}x{width}"),
                format!("{} values", pixels.len()),
            ));
        }
        if let Some(&value) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::PixelRange { value });
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    /// Clamp arbitrary reals into the valid range first.
    pub fn from_unclamped(height: usize, width: usize, mut pixels: Vec<f64>) -> Result<Self> {
        if pixels.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFiniteValue("image"));
        }
        pixels.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        Self::new(height, width, pixels)
    }

    /// Build from interleaved 8-bit RGB (`H × W × 3`).
    pub fn from_rgb8(height: usize, width: usize, rgb: &[u8]) -> Result<Self> {
        let plane = height * width;
        if rgb.len() != plane * Self::CHANNELS {
            return Err(Error::shape(
                format!("{} bytes", plane * Self::CHANNELS),
                format!("{} bytes", rgb.len()),
            ));
        }
        let mut pixels = alloc::vec![0.0; plane * Self::CHANNELS];
        for (i, px) in rgb.chunks_exact(3).enumerate() {
            for ch in 0..Self::CHANNELS {
                pixels[ch * plane + i] = f64::from(px[ch]) / 255.0;
            }
        }
        Self::new(height, width, pixels)
    }

    /// Interleaved 8-bit RGB, rounding to the nearest level.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let plane = self.height * self.width;
        let mut out = Vec::with_capacity(plane * Self::CHANNELS);
        for i in 0..plane {
            for ch in 0..Self::CHANNELS {
                let v = self.pixels[ch * plane + i];
                out.push(libm::round(v * 255.0) as u8);
            }
        }
        out
    }

    /// SHA-256 of the 8-bit RGB buffer; identical for a PNG and a PPM of the
    /// same picture.
    pub fn content_hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_rgb8()).into()
    }

    pub fn content_hash_hex(&self) -> String {
        hex::encode(self.content_hash())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// Dimensions `(channels, height, width)` of a latent image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatentShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl LatentShape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn numel(&self) -> usize {
        self.channels * self.height * self.width
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentImage {
    shape: LatentShape,
    values: Vec<f64>,
}

impl LatentImage {
    pub fn new(shape: LatentShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.numel() {
            return Err(Error::shape(
                format!("{} latent values", shape.numel()),
                format!("{}", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue("latent image"));
        }
        Ok(Self { shape, values })
    }

    pub fn shape(&self) -> LatentShape {
        self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// Seed and shape of the initial latent noise `n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub seed: u64,
    pub shape: LatentShape,
}

/// Distance used as the reconstruction loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Sum of squared pixel differences after decoding.
    #[default]
    PixelSse,
    /// Sum of squared differences between the final latent and `E(target)`.
    LatentSse,
}

impl core::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pixel_sse" => Ok(LossKind::PixelSse),
            "latent_sse" => Ok(LossKind::LatentSse),
            other => Err(Error::InvalidConfig(format!("unknown loss kind {other:?}"))),
        }
    }
}

/// Knobs of one inversion run. Defaults follow the ablation-selected values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InversionConfig {
    pub max_epoch: usize,
    pub learning_rate: f64,
    pub denoise_steps: usize,
    pub init_prompt_len: usize,
    pub noise_seed: u64,
    pub loss_kind: LossKind,
    pub beam_width: usize,
    pub correction_steps: usize,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            max_epoch: 1000,
            learning_rate: 0.05,
            denoise_steps: 5,
            init_prompt_len: 16,
            noise_seed: 0,
            loss_kind: LossKind::PixelSse,
            beam_width: 4,
            correction_steps: 4,
        }
    }
}

impl InversionConfig {
    /// `max_epoch == 0` is accepted: it runs the pipeline with refinement
    /// skipped.
    pub fn validate(&self) -> Result<()> {
        if self.denoise_steps == 0 {
            return Err(Error::InvalidConfig("denoise_steps must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.init_prompt_len == 0 || self.init_prompt_len > MAX_TOKENS {
            return Err(Error::InvalidConfig(format!(
                "init_prompt_len must be in 1..={MAX_TOKENS}"
            )));
        }
        if self.beam_width == 0 {
            return Err(Error::InvalidConfig("beam_width must be >= 1".into()));
        }
        Ok(())
    }
}

/// Everything one call to [`invert`](crate::optimizer::invert) produces.
#[derive(Clone, Debug, PartialEq)]
pub struct InversionResult {
    /// Caption used to initialize the embedding.
    pub initial_prompt: Prompt,
    pub prompt: Prompt,
    pub embedding: LatentTextEmbedding,
    /// `max_epoch + 1` entries; the first is the loss at the caption embedding.
    pub loss_trace: Vec<f64>,
    pub wall_time_s: f64,
    pub config: InversionConfig,
}
