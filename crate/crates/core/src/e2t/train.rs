use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Conditioning, ModelDims, ModelRole, SequenceModel};
use super::{corrector_features, zero_step_features, zero_step_generate};
use crate::backend::TextEncoder;
use crate::error::{Error, Result};
use crate::tokenizer::{Tokenizer, PAD_ID};
use crate::types::{LatentTextEmbedding, Prompt, TokenId, MAX_TOKENS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs_zero: usize,
    pub epochs_corrector: usize,
    pub max_len: usize,
    pub hidden: usize,
    /// Extra corrupted hypotheses per corpus item and corrector epoch.
    pub corruptions: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            learning_rate: 1e-3,
            epochs_zero: 60,
            epochs_corrector: 35,
            max_len: MAX_TOKENS,
            hidden: 128,
            corruptions: 2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(alloc::format!("{what} must be positive")));
        if self.batch_size == 0 {
            return bad("batch_size");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate");
        }
        if self.epochs_zero == 0 {
            return bad("epochs_zero");
        }
        if self.epochs_corrector == 0 {
            return bad("epochs_corrector");
        }
        if self.max_len == 0 {
            return bad("max_len");
        }
        if self.hidden == 0 {
            return bad("hidden");
        }
        Ok(())
    }
}

/// Mean per-token cross-entropy of each epoch, plus anything worth flagging.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub warnings: Vec<String>,
}

impl TrainReport {
    fn finish(mut self) -> Self {
        if let (Some(first), Some(last)) = (self.epoch_losses.first(), self.epoch_losses.last()) {
            if self.epoch_losses.len() > 1 && last >= first {
                self.warnings.push(alloc::format!(
                    "training loss did not decrease ({first:.4} -> {last:.4})"
                ));
            }
        }
        self
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self {
            m: alloc::vec![0.0; n],
            v: alloc::vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(Self::B1, self.t as f64);
        let c2 = 1.0 - libm::pow(Self::B2, self.t as f64);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            *p -= self.lr * (*m / c1) / (libm::sqrt(*v / c2) + Self::EPS);
        }
    }
}

/// Per-coordinate mean and standard deviation; constant coordinates get
/// scale 1.
fn feature_stats(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let dim = rows[0].len();
    let n = rows.len() as f64;
    let mut mean = alloc::vec![0.0; dim];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x / n;
        }
    }
    let mut var = alloc::vec![0.0; dim];
    for r in rows {
        for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
            *v += (x - m) * (x - m) / n;
        }
    }
    let scale = var
        .into_iter()
        .map(|v| {
            let s = libm::sqrt(v);
            if s > 1e-9 {
                s
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

fn check_corpus(corpus: &[(Prompt, LatentTextEmbedding)], tokenizer: &dyn Tokenizer) -> Result<usize> {
    let (first, rest) = corpus.split_first().ok_or(Error::EmptyCorpus)?;
    let (_, d) = first.1.shape();
    for (p, c) in rest {
        if c.embed_dim() != d {
            return Err(Error::shape(alloc::format!("embed dim {d}"), alloc::format!("{}", c.embed_dim())));
        }
        if let Some(&id) = p.token_ids().iter().find(|&&id| id as usize >= tokenizer.vocab_size()) {
            return Err(Error::OutOfVocabulary {
                id,
                vocab_size: tokenizer.vocab_size(),
            });
        }
    }
    if tokenizer.pad_id() != PAD_ID {
        return Err(Error::InvalidConfig("sequence models need pad id 0".into()));
    }
    Ok(d)
}

/// One pass over `items` in shuffled minibatches; returns mean per-token loss.
fn run_epoch(
    model: &mut SequenceModel,
    adam: &mut Adam,
    items: &[(Conditioning, &[TokenId])],
    batch_size: usize,
    rng: &mut impl Rng,
) -> f64 {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(rng);
    let mut grad = alloc::vec![0.0; model.params().len()];
    let (mut total, mut tokens) = (0.0, 0usize);
    for batch in order.chunks(batch_size) {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut batch_tokens = 0;
        for &i in batch {
            let (cond, target) = &items[i];
            let (loss, n) = model.accumulate_gradient(cond, target, &mut grad);
            total += loss;
            batch_tokens += n;
        }
        tokens += batch_tokens;
        let inv = 1.0 / batch_tokens.max(1) as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        adam.step(model.params_mut(), &grad);
    }
    total / tokens.max(1) as f64
}

/// Maximum likelihood training of `p(x | c)`.
pub fn train_zero_step(
    corpus: &[(Prompt, LatentTextEmbedding)],
    tokenizer: &dyn Tokenizer,
    cfg: &TrainConfig,
) -> Result<(SequenceModel, TrainReport)> {
    cfg.validate()?;
    let d = check_corpus(corpus, tokenizer)?;
    let raw: Vec<Vec<f64>> = corpus.iter().map(|(_, c)| zero_step_features(c)).collect();
    let (mean, scale) = feature_stats(&raw);
    let dims = ModelDims {
        role: ModelRole::ZeroStep,
        vocab_size: tokenizer.vocab_size(),
        embed_dim: d,
        hidden: cfg.hidden,
        max_len: cfg.max_len,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = SequenceModel::init(dims, mean, scale, &mut rng);
    let items = raw
        .iter()
        .zip(corpus)
        .map(|(f, (p, _))| Ok((model.condition(f, None)?, p.token_ids())))
        .collect::<Result<Vec<_>>>()?;
    let mut adam = Adam::new(model.params().len(), cfg.learning_rate);
    let mut report = TrainReport::default();
    for _ in 0..cfg.epochs_zero {
        let loss = run_epoch(&mut model, &mut adam, &items, cfg.batch_size, &mut rng);
        report.epoch_losses.push(loss);
    }
    Ok((model, report.finish()))
}

/// Replace 1..=2 positions of `target` with tokens seen at the same position
/// elsewhere in the corpus.
fn corrupt(target: &[TokenId], seen: &[Vec<TokenId>], rng: &mut impl Rng) -> Vec<TokenId> {
    let mut out = target.to_vec();
    if out.is_empty() {
        return out;
    }
    let edits = rng.random_range(1..=2usize.min(out.len()));
    for _ in 0..edits {
        let pos = rng.random_range(0..out.len());
        if let Some(&tok) = seen.get(pos).and_then(|s| s.get(rng.random_range(0..s.len().max(1)))) {
            out[pos] = tok;
        }
    }
    out
}

/// Cross-entropy training of `p(x | c, x̂, T(x̂))`. Hypotheses are the
/// zero-step decodes of every corpus item plus, each epoch, `cfg.corruptions`
/// freshly corrupted copies of the reference.
pub fn train_corrector(
    corpus: &[(Prompt, LatentTextEmbedding)],
    zero: &SequenceModel,
    encoder: &(impl TextEncoder + ?Sized),
    cfg: &TrainConfig,
) -> Result<(SequenceModel, TrainReport)> {
    cfg.validate()?;
    let tokenizer = encoder.tokenizer();
    let d = check_corpus(corpus, tokenizer)?;
    if zero.role() != ModelRole::ZeroStep || zero.dims().embed_dim != d {
        return Err(Error::InvalidConfig("zero-step model does not match the corpus".into()));
    }
    let max_len = cfg.max_len.min(encoder.seq_len());

    let mut seen: Vec<Vec<TokenId>> = Vec::new();
    for (p, _) in corpus {
        for (i, &id) in p.token_ids().iter().enumerate() {
            if seen.len() <= i {
                seen.push(Vec::new());
            }
            if !seen[i].contains(&id) {
                seen[i].push(id);
            }
        }
    }

    let encode = |ids: &[TokenId]| -> Result<LatentTextEmbedding> {
        let prompt = tokenizer.prompt_from_ids(ids)?;
        encoder.encode_text(&prompt)
    };

    let mut fixed: Vec<(Vec<f64>, Vec<TokenId>, usize)> = Vec::with_capacity(corpus.len());
    for (k, (_, c)) in corpus.iter().enumerate() {
        let hyp = zero_step_generate(zero, c, max_len)?;
        let hyp_c = encode(hyp.token_ids())?;
        fixed.push((corrector_features(c, &hyp_c)?, hyp.token_ids().to_vec(), k));
    }
    let raw: Vec<Vec<f64>> = fixed.iter().map(|(f, _, _)| f.clone()).collect();
    let (mean, scale) = feature_stats(&raw);
    let dims = ModelDims {
        role: ModelRole::Corrector,
        vocab_size: tokenizer.vocab_size(),
        embed_dim: d,
        hidden: cfg.hidden,
        max_len: cfg.max_len,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xc011_ec70);
    let mut model = SequenceModel::init(dims, mean, scale, &mut rng);
    let mut adam = Adam::new(model.params().len(), cfg.learning_rate);
    let mut report = TrainReport::default();

    let mut conds: Vec<(Conditioning, usize)> = fixed
        .iter()
        .map(|(f, h, k)| Ok((model.condition(f, Some(h))?, *k)))
        .collect::<Result<Vec<_>>>()?;
    let n_fixed = conds.len();
    for _ in 0..cfg.epochs_corrector {
        conds.truncate(n_fixed);
        for (k, (p, c)) in corpus.iter().enumerate() {
            for _ in 0..cfg.corruptions {
                let hyp = corrupt(p.token_ids(), &seen, &mut rng);
                let f = corrector_features(c, &encode(&hyp)?)?;
                conds.push((model.condition(&f, Some(&hyp))?, k));
            }
        }
        let items: Vec<(Conditioning, &[TokenId])> = conds
            .iter()
            .map(|(cond, k)| (cond.clone(), corpus[*k].0.token_ids()))
            .collect();
        let loss = run_epoch(&mut model, &mut adam, &items, cfg.batch_size, &mut rng);
        report.epoch_losses.push(loss);
    }
    Ok((model, report.finish()))
}
