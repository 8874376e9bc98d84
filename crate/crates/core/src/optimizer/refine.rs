use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::backend::DiffusionBackend;
use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::types::{ImageTensor, InversionConfig, LatentTextEmbedding, NoiseSpec};

/// Loss history of one refinement run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OptTrace {
    /// `epochs + 1` entries, the first at the starting embedding.
    pub losses: Vec<f64>,
    /// Gradient Frobenius norm at each recorded point.
    pub grad_norms: Vec<f64>,
    pub epochs: usize,
}

impl OptTrace {
    pub fn initial_loss(&self) -> f64 {
        self.losses[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("trace is never empty")
    }
}

/// One line of the optional per-epoch trace file.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub grad_norm: f64,
}

pub(crate) fn check_steps(backend: &(impl DiffusionBackend + ?Sized), cfg: &InversionConfig) -> Result<()> {
    let steps = backend.schedule().len();
    if cfg.denoise_steps != steps {
        return Err(Error::InvalidConfig(format!(
            "denoise_steps {} does not match the backend schedule ({steps})",
            cfg.denoise_steps
        )));
    }
    Ok(())
}

/// Plain gradient descent on the post-encoder embedding:
/// `c <- c - lr * dL/dc`, exactly `cfg.max_epoch` times, with the noise held
/// fixed.
pub fn refine_embedding(
    backend: &(impl DiffusionBackend + ?Sized),
    c0: &LatentTextEmbedding,
    noise: &NoiseSpec,
    target: &ImageTensor,
    cfg: &InversionConfig,
) -> Result<(LatentTextEmbedding, OptTrace)> {
    refine_embedding_observed(backend, c0, noise, target, cfg, &mut |_| {})
}

/// [`refine_embedding`] reporting every recorded point to `on_epoch`.
pub fn refine_embedding_observed(
    backend: &(impl DiffusionBackend + ?Sized),
    c0: &LatentTextEmbedding,
    noise: &NoiseSpec,
    target: &ImageTensor,
    cfg: &InversionConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(LatentTextEmbedding, OptTrace)> {
    cfg.validate()?;
    check_steps(backend, cfg)?;
    let mut c = c0.clone();
    let mut trace = OptTrace {
        losses: Vec::with_capacity(cfg.max_epoch + 1),
        grad_norms: Vec::with_capacity(cfg.max_epoch + 1),
        epochs: cfg.max_epoch,
    };
    for epoch in 0..=cfg.max_epoch {
        let (loss, grad) = backend.loss_and_gradient(&c, noise, target, cfg.loss_kind)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite { what: "loss", epoch });
        }
        let grad_norm = norm(grad.as_slice());
        if !grad_norm.is_finite() {
            return Err(Error::NonFinite {
                what: "gradient",
                epoch,
            });
        }
        let record = EpochRecord {
            epoch,
            loss,
            grad_norm,
        };
        on_epoch(&record);
        trace.losses.push(loss);
        trace.grad_norms.push(grad_norm);
        if epoch == cfg.max_epoch {
            break;
        }
        c.descend(cfg.learning_rate, &grad);
        if !c.is_finite() {
            return Err(Error::NonFinite {
                what: "embedding",
                epoch,
            });
        }
    }
    Ok((c, trace))
}
