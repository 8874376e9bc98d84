//! Image similarity, text alignment and prompt perplexity.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::backend::DiffusionBackend;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::optimizer::VocabEmbeddingTable;
use crate::types::{ImageTensor, InversionConfig, InversionResult, Prompt, TokenId};

/// Cosine similarity; zero if either side has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

pub trait ImageEmbedder: Send + Sync {
    fn embed_image(&self, x: &ImageTensor) -> Result<Vec<f64>>;
}

/// The backend's image encoder, flattened.
pub struct LatentEmbedder<'a, B: ?Sized>(pub &'a B);

impl<B: DiffusionBackend + ?Sized> ImageEmbedder for LatentEmbedder<'_, B> {
    fn embed_image(&self, x: &ImageTensor) -> Result<Vec<f64>> {
        Ok(self.0.encode_image(x)?.as_slice().to_vec())
    }
}

/// Raw pixels as the embedding.
pub struct PixelEmbedder;

impl ImageEmbedder for PixelEmbedder {
    fn embed_image(&self, x: &ImageTensor) -> Result<Vec<f64>> {
        Ok(x.pixels().to_vec())
    }
}

pub fn image_similarity(a: &ImageTensor, b: &ImageTensor, embedder: &dyn ImageEmbedder) -> Result<f64> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(Error::shape(
            alloc::format!("{}x{}", a.height(), a.width()),
            alloc::format!("{}x{}", b.height(), b.width()),
        ));
    }
    Ok(cosine(&embedder.embed_image(a)?, &embedder.embed_image(b)?))
}

/// Optional LPIPS-style scorer; none ships with the crate.
pub trait PerceptualScorer: Send + Sync {
    fn distance(&self, a: &ImageTensor, b: &ImageTensor) -> Result<f64>;
}

pub trait TokenEmbedder: Send + Sync {
    fn embed_token(&self, id: TokenId) -> Result<&[f64]>;
}

impl TokenEmbedder for VocabEmbeddingTable {
    fn embed_token(&self, id: TokenId) -> Result<&[f64]> {
        if id as usize >= self.vocab_size() {
            return Err(Error::OutOfVocabulary {
                id,
                vocab_size: self.vocab_size(),
            });
        }
        Ok(self.row(id))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextAlignment {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r <= 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Greedy soft matching: each predicted token takes its best cosine against
/// the reference and vice versa. Negative similarities count as zero.
pub fn text_alignment(pred: &Prompt, reference: &Prompt, embedder: &dyn TokenEmbedder) -> Result<TextAlignment> {
    if pred.is_empty() || reference.is_empty() {
        return Err(Error::EmptyPrompt);
    }
    let pv = pred
        .token_ids()
        .iter()
        .map(|&id| embedder.embed_token(id))
        .collect::<Result<Vec<_>>>()?;
    let rv = reference
        .token_ids()
        .iter()
        .map(|&id| embedder.embed_token(id))
        .collect::<Result<Vec<_>>>()?;
    let side = |from: &[&[f64]], to: &[&[f64]]| {
        from.iter()
            .map(|a| to.iter().map(|b| cosine(a, b)).fold(f64::NEG_INFINITY, f64::max).max(0.0))
            .sum::<f64>()
            / from.len() as f64
    };
    let precision = side(&pv, &rv);
    let recall = side(&rv, &pv);
    Ok(TextAlignment {
        precision,
        recall,
        f1: harmonic(precision, recall),
    })
}

/// Exact multiset token overlap F1.
pub fn token_f1(pred: &[TokenId], reference: &[TokenId]) -> f64 {
    if pred.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let mut pool = reference.to_vec();
    let mut hits = 0usize;
    for id in pred {
        if let Some(k) = pool.iter().position(|r| r == id) {
            pool.swap_remove(k);
            hits += 1;
        }
    }
    harmonic(hits as f64 / pred.len() as f64, hits as f64 / reference.len() as f64)
}

/// A left-to-right language model over token ids.
pub trait LanguageModelScorer: Send + Sync {
    fn vocab_size(&self) -> usize;

    /// Distribution over the next token given the preceding ones.
    fn next_token_distribution(&self, context: &[TokenId]) -> Vec<f64>;

    fn log_prob(&self, context: &[TokenId], token: TokenId) -> f64 {
        libm::log(self.next_token_distribution(context)[token as usize])
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct UniformLm {
    pub vocab_size: usize,
}

impl LanguageModelScorer for UniformLm {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_token_distribution(&self, _: &[TokenId]) -> Vec<f64> {
        alloc::vec![1.0 / self.vocab_size as f64; self.vocab_size]
    }

    fn log_prob(&self, _: &[TokenId], _: TokenId) -> f64 {
        -libm::log(self.vocab_size as f64)
    }
}

/// Add-k smoothed bigram model with a start-of-sequence row.
#[derive(Clone, Debug, PartialEq)]
pub struct BigramLm {
    vocab_size: usize,
    /// `(V + 1) × V` log probabilities; the last row follows the start token.
    log_probs: Vec<f64>,
}

impl BigramLm {
    pub const DEFAULT_SMOOTHING: f64 = 0.1;

    pub fn fit<'a>(
        prompts: impl IntoIterator<Item = &'a Prompt>,
        vocab_size: usize,
        smoothing: f64,
    ) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::InvalidConfig("bigram model needs a vocabulary".into()));
        }
        if !(smoothing > 0.0) {
            return Err(Error::InvalidConfig("bigram smoothing must be positive".into()));
        }
        let v = vocab_size;
        let mut counts = alloc::vec![0.0; (v + 1) * v];
        let mut seen = 0usize;
        for p in prompts {
            let mut prev = v;
            for &id in p.token_ids() {
                if id as usize >= v {
                    return Err(Error::OutOfVocabulary { id, vocab_size: v });
                }
                counts[prev * v + id as usize] += 1.0;
                prev = id as usize;
            }
            seen += 1;
        }
        if seen == 0 {
            return Err(Error::EmptyCorpus);
        }
        let mut log_probs = counts;
        for row in log_probs.chunks_exact_mut(v) {
            let total: f64 = row.iter().sum::<f64>() + smoothing * v as f64;
            for x in row.iter_mut() {
                *x = libm::log((*x + smoothing) / total);
            }
        }
        Ok(Self { vocab_size, log_probs })
    }

    fn row(&self, context: &[TokenId]) -> &[f64] {
        let prev = context
            .last()
            .map_or(self.vocab_size, |&id| (id as usize).min(self.vocab_size));
        &self.log_probs[prev * self.vocab_size..(prev + 1) * self.vocab_size]
    }
}

impl LanguageModelScorer for BigramLm {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_token_distribution(&self, context: &[TokenId]) -> Vec<f64> {
        self.row(context).iter().map(|&lp| libm::exp(lp)).collect()
    }

    fn log_prob(&self, context: &[TokenId], token: TokenId) -> f64 {
        self.row(context)[token as usize]
    }
}

/// `exp` of the mean per-token negative log-likelihood.
pub fn perplexity(p: &Prompt, lm: &dyn LanguageModelScorer) -> Result<f64> {
    let ids = p.token_ids();
    if ids.is_empty() {
        return Err(Error::EmptyPrompt);
    }
    if let Some(&id) = ids.iter().find(|&&id| id as usize >= lm.vocab_size()) {
        return Err(Error::OutOfVocabulary {
            id,
            vocab_size: lm.vocab_size(),
        });
    }
    let nll: f64 = (0..ids.len()).map(|i| -lm.log_prob(&ids[..i], ids[i])).sum();
    Ok(libm::exp(nll / ids.len() as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub image_cosine: f64,
    /// `None` unless a perceptual scorer was supplied.
    pub perceptual_distance: Option<f64>,
    pub text_precision: f64,
    pub text_recall: f64,
    pub text_f1: f64,
    /// Exact token overlap against the reference.
    pub token_f1: f64,
    pub perplexity: f64,
}

impl MetricsReport {
    /// `text_f1` is the harmonic mean of precision and recall.
    pub fn is_consistent(&self) -> bool {
        let want = harmonic(self.text_precision, self.text_recall);
        (self.text_f1 - want).abs() <= 1e-9
    }
}

pub struct Scorers<'a> {
    pub image: &'a dyn ImageEmbedder,
    pub tokens: &'a dyn TokenEmbedder,
    pub lm: &'a dyn LanguageModelScorer,
    pub perceptual: Option<&'a dyn PerceptualScorer>,
}

/// Regenerate from the inverted prompt with the run's noise and fill every
/// metric.
pub fn evaluate_run(
    result: &InversionResult,
    target: &ImageTensor,
    reference: &Prompt,
    backend: &(impl DiffusionBackend + ?Sized),
    scorers: &Scorers<'_>,
) -> Result<MetricsReport> {
    evaluate_prompt(&result.prompt, &result.config, target, reference, backend, scorers)
}

/// [`evaluate_run`] for a prompt read back from a results file.
pub fn evaluate_prompt(
    prompt: &Prompt,
    cfg: &InversionConfig,
    target: &ImageTensor,
    reference: &Prompt,
    backend: &(impl DiffusionBackend + ?Sized),
    scorers: &Scorers<'_>,
) -> Result<MetricsReport> {
    let c = backend.encode_text(prompt).map_err(|e| e.in_stage("encode"))?;
    let noise = backend.noise_spec(cfg.noise_seed);
    let image = backend
        .generate(&c, &noise, cfg.denoise_steps)
        .map_err(|e| e.in_stage("generate"))?;
    let image_cosine = image_similarity(&image, target, scorers.image).map_err(|e| e.in_stage("image_similarity"))?;
    let perceptual_distance = scorers
        .perceptual
        .map(|s| s.distance(&image, target))
        .transpose()
        .map_err(|e| e.in_stage("perceptual"))?;
    let align = text_alignment(prompt, reference, scorers.tokens).map_err(|e| e.in_stage("text_alignment"))?;
    let ppl = perplexity(prompt, scorers.lm).map_err(|e| e.in_stage("perplexity"))?;
    Ok(MetricsReport {
        image_cosine,
        perceptual_distance,
        text_precision: align.precision,
        text_recall: align.recall,
        text_f1: align.f1,
        token_f1: token_f1(prompt.token_ids(), reference.token_ids()),
        perplexity: ppl,
    })
}
