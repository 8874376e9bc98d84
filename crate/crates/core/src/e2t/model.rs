//! Small conditional autoregressive decoder shared by the zero-step and
//! correction models.
//!
//! At position `i` the hidden state is
//! `tanh(W f + b + prev[x_{i-1}] + pos[i] + hyp[x̂_i])` and the next-token
//! distribution is `softmax(U h + u)`. `f` is the standardized conditioning
//! vector; the `hyp` term only exists for the corrector. The pad token doubles
//! as end-of-sequence.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot};
use crate::tokenizer::PAD_ID;
use crate::types::TokenId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    /// `p(x | c)`
    ZeroStep,
    /// `p(x | c, x̂, T(x̂))`
    Corrector,
}

impl ModelRole {
    /// Conditioning width in units of the embedding dimension.
    pub fn feature_blocks(self) -> usize {
        match self {
            ModelRole::ZeroStep => 1,
            ModelRole::Corrector => 3,
        }
    }
}

/// Shape of a [`SequenceModel`]; everything needed to interpret its
/// parameter blob.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub role: ModelRole,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub max_len: usize,
}

impl ModelDims {
    pub fn feature_dim(&self) -> usize {
        self.role.feature_blocks() * self.embed_dim
    }

    fn layout(&self) -> Layout {
        let (v, h, f) = (self.vocab_size, self.hidden, self.feature_dim());
        let mut at = 0;
        let mut take = |n: usize| {
            let start = at;
            at += n;
            start
        };
        let w_cond = take(h * f);
        let b_hidden = take(h);
        let prev = take((v + 1) * h);
        let pos = take(self.max_len * h);
        let hyp = match self.role {
            ModelRole::Corrector => take((v + 1) * h),
            ModelRole::ZeroStep => usize::MAX,
        };
        let w_out = take(v * h);
        let b_out = take(v);
        Layout {
            w_cond,
            b_hidden,
            prev,
            pos,
            hyp,
            w_out,
            b_out,
            total: at,
        }
    }

    /// Total parameter count (excluding feature statistics).
    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Layout {
    w_cond: usize,
    b_hidden: usize,
    prev: usize,
    pos: usize,
    hyp: usize,
    w_out: usize,
    b_out: usize,
    total: usize,
}

/// Standardized conditioning for one decode.
#[derive(Clone, Debug, PartialEq)]
pub struct Conditioning {
    features: Vec<f64>,
    hypothesis: Option<Vec<TokenId>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceModel {
    dims: ModelDims,
    layout: Layout,
    feature_mean: Vec<f64>,
    feature_scale: Vec<f64>,
    params: Vec<f64>,
}

/// Scratch buffers for one decoding position.
struct Step {
    hidden: Vec<f64>,
    probs: Vec<f64>,
}

impl SequenceModel {
    pub(crate) fn init(
        dims: ModelDims,
        feature_mean: Vec<f64>,
        feature_scale: Vec<f64>,
        rng: &mut impl Rng,
    ) -> Self {
        let layout = dims.layout();
        let mut params = alloc::vec![0.0; layout.total];
        let f = dims.feature_dim();
        let h = dims.hidden;
        let mut fill = |range: core::ops::Range<usize>, std: f64| {
            for p in &mut params[range] {
                let z: f64 = StandardNormal.sample(rng);
                *p = z * std;
            }
        };
        fill(layout.w_cond..layout.w_cond + h * f, 1.0 / libm::sqrt(f as f64));
        fill(layout.prev..layout.prev + (dims.vocab_size + 1) * h, 0.3);
        fill(layout.pos..layout.pos + dims.max_len * h, 0.3);
        if dims.role == ModelRole::Corrector {
            fill(layout.hyp..layout.hyp + (dims.vocab_size + 1) * h, 0.3);
        }
        fill(layout.w_out..layout.w_out + dims.vocab_size * h, 1.0 / libm::sqrt(h as f64));
        Self {
            dims,
            layout,
            feature_mean,
            feature_scale,
            params,
        }
    }

    /// Rebuild from the blob produced by [`SequenceModel::to_blob`].
    pub fn from_blob(dims: ModelDims, blob: &[f64]) -> Result<Self> {
        let layout = dims.layout();
        let f = dims.feature_dim();
        if blob.len() != 2 * f + layout.total {
            return Err(Error::Format(alloc::format!(
                "parameter blob has {} values, dims require {}",
                blob.len(),
                2 * f + layout.total
            )));
        }
        if blob.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue("model parameters"));
        }
        Ok(Self {
            dims,
            layout,
            feature_mean: blob[..f].to_vec(),
            feature_scale: blob[f..2 * f].to_vec(),
            params: blob[2 * f..].to_vec(),
        })
    }

    /// Feature mean, feature scale, then parameters.
    pub fn to_blob(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.feature_mean.len() * 2 + self.params.len());
        out.extend_from_slice(&self.feature_mean);
        out.extend_from_slice(&self.feature_scale);
        out.extend_from_slice(&self.params);
        out
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn role(&self) -> ModelRole {
        self.dims.role
    }

    pub fn max_len(&self) -> usize {
        self.dims.max_len
    }

    pub(crate) fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Standardize raw features and attach the hypothesis (corrector only).
    pub fn condition(&self, raw: &[f64], hypothesis: Option<&[TokenId]>) -> Result<Conditioning> {
        if raw.len() != self.dims.feature_dim() {
            return Err(Error::shape(
                alloc::format!("{} conditioning features", self.dims.feature_dim()),
                alloc::format!("{}", raw.len()),
            ));
        }
        let hypothesis = match (self.dims.role, hypothesis) {
            (ModelRole::Corrector, Some(h)) => Some(h.to_vec()),
            (ModelRole::Corrector, None) => {
                return Err(Error::InvalidConfig("corrector needs a hypothesis".into()))
            }
            (ModelRole::ZeroStep, _) => None,
        };
        let features = raw
            .iter()
            .zip(&self.feature_mean)
            .zip(&self.feature_scale)
            .map(|((x, m), s)| (x - m) / s)
            .collect();
        Ok(Conditioning {
            features,
            hypothesis,
        })
    }

    fn base(&self, cond: &Conditioning) -> Vec<f64> {
        let (h, f) = (self.dims.hidden, self.dims.feature_dim());
        let w = &self.params[self.layout.w_cond..self.layout.w_cond + h * f];
        let b = &self.params[self.layout.b_hidden..self.layout.b_hidden + h];
        w.chunks_exact(f)
            .zip(b)
            .map(|(row, bias)| dot(row, &cond.features) + bias)
            .collect()
    }

    fn hyp_index(&self, cond: &Conditioning, pos: usize) -> Option<usize> {
        let hyp = cond.hypothesis.as_ref()?;
        Some(match hyp.get(pos) {
            Some(&id) => id as usize,
            None if pos == hyp.len() => PAD_ID as usize,
            None => self.dims.vocab_size,
        })
    }

    fn new_step(&self) -> Step {
        Step {
            hidden: alloc::vec![0.0; self.dims.hidden],
            probs: alloc::vec![0.0; self.dims.vocab_size],
        }
    }

    /// Forward one position; fills `step.hidden` and `step.probs`.
    fn forward(
        &self,
        base: &[f64],
        cond: &Conditioning,
        pos: usize,
        prev: Option<TokenId>,
        step: &mut Step,
    ) {
        let h = self.dims.hidden;
        let v = self.dims.vocab_size;
        let prev_idx = prev.map_or(v, |id| id as usize);
        let prev_row = &self.params[self.layout.prev + prev_idx * h..][..h];
        let pos_row = &self.params[self.layout.pos + pos * h..][..h];
        step.hidden.copy_from_slice(base);
        axpy(1.0, prev_row, &mut step.hidden);
        axpy(1.0, pos_row, &mut step.hidden);
        if let Some(k) = self.hyp_index(cond, pos) {
            axpy(1.0, &self.params[self.layout.hyp + k * h..][..h], &mut step.hidden);
        }
        step.hidden.iter_mut().for_each(|x| *x = libm::tanh(*x));
        let w_out = &self.params[self.layout.w_out..self.layout.w_out + v * h];
        let b_out = &self.params[self.layout.b_out..self.layout.b_out + v];
        let mut max = f64::NEG_INFINITY;
        for ((p, row), b) in step.probs.iter_mut().zip(w_out.chunks_exact(h)).zip(b_out) {
            *p = dot(row, &step.hidden) + b;
            max = max.max(*p);
        }
        let mut total = 0.0;
        for p in step.probs.iter_mut() {
            *p = libm::exp(*p - max);
            total += *p;
        }
        step.probs.iter_mut().for_each(|p| *p /= total);
    }

    fn decode_limit(&self, max_len: usize) -> usize {
        max_len.min(self.dims.max_len)
    }

    /// Next-token distribution after `prefix`.
    pub fn next_token_distribution(&self, cond: &Conditioning, prefix: &[TokenId]) -> Vec<f64> {
        let base = self.base(cond);
        let mut step = self.new_step();
        let pos = prefix.len().min(self.dims.max_len - 1);
        self.forward(&base, cond, pos, prefix.last().copied(), &mut step);
        step.probs
    }

    /// `log p(seq, EOS | cond)`; the end token is scored only if `seq` is
    /// shorter than `max_len`.
    pub fn log_likelihood(&self, cond: &Conditioning, seq: &[TokenId]) -> f64 {
        let base = self.base(cond);
        let mut step = self.new_step();
        let n = seq.len().min(self.dims.max_len);
        let steps = (n + 1).min(self.dims.max_len);
        let mut total = 0.0;
        for i in 0..steps {
            let prev = if i == 0 { None } else { Some(seq[i - 1]) };
            self.forward(&base, cond, i, prev, &mut step);
            let y = if i < n { seq[i] } else { PAD_ID };
            total += libm::log(step.probs[y as usize].max(f64::MIN_POSITIVE));
        }
        total
    }

    /// Greedy decode of at most `max_len` tokens.
    pub fn greedy(&self, cond: &Conditioning, max_len: usize) -> Vec<TokenId> {
        let base = self.base(cond);
        let mut step = self.new_step();
        let mut out = Vec::new();
        for i in 0..self.decode_limit(max_len) {
            self.forward(&base, cond, i, out.last().copied(), &mut step);
            let (best, _) = step
                .probs
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (k, &p)| if p > acc.1 { (k, p) } else { acc });
            if best as TokenId == PAD_ID {
                break;
            }
            out.push(best as TokenId);
        }
        out
    }

    /// Likelihood beam search; returns up to `width` sequences, best first.
    pub fn beam(&self, cond: &Conditioning, width: usize, max_len: usize) -> Vec<(Vec<TokenId>, f64)> {
        let base = self.base(cond);
        let mut step = self.new_step();
        let limit = self.decode_limit(max_len);
        // (tokens, log prob, finished)
        let mut beams: Vec<(Vec<TokenId>, f64, bool)> = alloc::vec![(Vec::new(), 0.0, false)];
        for i in 0..limit {
            let mut next: Vec<(Vec<TokenId>, f64, bool)> = Vec::new();
            for (seq, score, done) in &beams {
                if *done {
                    next.push((seq.clone(), *score, true));
                    continue;
                }
                self.forward(&base, cond, i, seq.last().copied(), &mut step);
                let mut ranked: Vec<(usize, f64)> = step.probs.iter().copied().enumerate().collect();
                ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                for &(tok, p) in ranked.iter().take(width) {
                    let lp = score + libm::log(p.max(f64::MIN_POSITIVE));
                    if tok as TokenId == PAD_ID {
                        next.push((seq.clone(), lp, true));
                    } else {
                        let mut s = seq.clone();
                        s.push(tok as TokenId);
                        next.push((s, lp, false));
                    }
                }
            }
            next.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            next.truncate(width);
            beams = next;
            if beams.iter().all(|b| b.2) {
                break;
            }
        }
        beams.into_iter().map(|(s, lp, _)| (s, lp)).collect()
    }

    /// Add the gradient of `-log p(target, EOS | cond)` to `grad`; returns the
    /// loss and the number of scored tokens.
    pub(crate) fn accumulate_gradient(
        &self,
        cond: &Conditioning,
        target: &[TokenId],
        grad: &mut [f64],
    ) -> (f64, usize) {
        let (h, v, f) = (self.dims.hidden, self.dims.vocab_size, self.dims.feature_dim());
        let lay = self.layout;
        let base = self.base(cond);
        let mut step = self.new_step();
        let n = target.len().min(self.dims.max_len);
        let steps = (n + 1).min(self.dims.max_len);
        let mut dpre_sum = alloc::vec![0.0; h];
        let mut dh = alloc::vec![0.0; h];
        let mut loss = 0.0;
        for i in 0..steps {
            let prev = if i == 0 { None } else { Some(target[i - 1]) };
            self.forward(&base, cond, i, prev, &mut step);
            let y = if i < n { target[i] } else { PAD_ID } as usize;
            loss -= libm::log(step.probs[y].max(f64::MIN_POSITIVE));

            let mut dlogits = core::mem::take(&mut step.probs);
            dlogits[y] -= 1.0;
            dh.iter_mut().for_each(|x| *x = 0.0);
            {
                let w_out = &self.params[lay.w_out..lay.w_out + v * h];
                for (k, &g) in dlogits.iter().enumerate() {
                    axpy(g, &w_out[k * h..(k + 1) * h], &mut dh);
                }
            }
            for (k, &g) in dlogits.iter().enumerate() {
                axpy(g, &step.hidden, &mut grad[lay.w_out + k * h..lay.w_out + (k + 1) * h]);
                grad[lay.b_out + k] += g;
            }
            step.probs = dlogits;

            for (d, hv) in dh.iter_mut().zip(&step.hidden) {
                *d *= 1.0 - hv * hv;
            }
            let prev_idx = prev.map_or(v, |id| id as usize);
            axpy(1.0, &dh, &mut grad[lay.prev + prev_idx * h..][..h]);
            axpy(1.0, &dh, &mut grad[lay.pos + i * h..][..h]);
            if let Some(k) = self.hyp_index(cond, i) {
                axpy(1.0, &dh, &mut grad[lay.hyp + k * h..][..h]);
            }
            axpy(1.0, &dh, &mut dpre_sum);
        }
        axpy(1.0, &dpre_sum, &mut grad[lay.b_hidden..lay.b_hidden + h]);
        for (r, &g) in dpre_sum.iter().enumerate() {
            axpy(g, &cond.features, &mut grad[lay.w_cond + r * f..lay.w_cond + (r + 1) * f]);
        }
        (loss, steps)
    }
}
