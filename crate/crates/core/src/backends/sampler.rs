//! DDIM-style update from an epsilon prediction.

use serde::{Deserialize, Serialize};

use super::schedule::DiffusionSchedule;
use super::BackendError;
use crate::tensor::LatentGrid;

/// How a backend turns its noise prediction into the next latent.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Sampler {
    /// eta = 0: no fresh noise, fully reproducible.
    #[default]
    Deterministic,
    /// eta in (0, 1]; fresh noise must be supplied per step.
    Stochastic { eta: f64 },
}

impl Sampler {
    pub fn eta(&self) -> f64 {
        match self {
            Sampler::Deterministic => 0.0,
            Sampler::Stochastic { eta } => *eta,
        }
    }
}

/// Clean-signal estimate `(x - sqrt(1 - a) * eps) / sqrt(a)`.
pub fn predict_x0(latent: &LatentGrid, eps: &LatentGrid, alpha_bar: f64) -> LatentGrid {
    let s = alpha_bar.sqrt();
    latent.axpby(1.0 / s, eps, -(1.0 - alpha_bar).sqrt() / s)
}

/// Step from `t` to `t - 1`.
pub fn ddim_step(
    latent: &LatentGrid,
    eps: &LatentGrid,
    t: usize,
    schedule: &DiffusionSchedule,
    sampler: Sampler,
    noise: Option<&LatentGrid>,
) -> Result<LatentGrid, BackendError> {
    if t == 0 || t > schedule.steps() {
        return Err(BackendError::TimestepOutOfRange {
            t,
            steps: schedule.steps(),
        });
    }
    let a_t = schedule.alpha_bar(t);
    let a_prev = schedule.alpha_bar(t - 1);
    let x0 = predict_x0(latent, eps, a_t);
    let eta = sampler.eta();
    let sigma = eta * ((1.0 - a_prev) / (1.0 - a_t)).sqrt() * (1.0 - a_t / a_prev).sqrt();
    let dir = (1.0 - a_prev - sigma * sigma).max(0.0).sqrt();
    let mut next = x0.axpby(a_prev.sqrt(), eps, dir);
    if sigma > 0.0 {
        let z = noise.ok_or(BackendError::MissingNoise)?;
        if z.dims() != latent.dims() {
            return Err(BackendError::ShapeMismatch {
                expected: latent.dims(),
                actual: z.dims(),
            });
        }
        next = next.axpby(1.0, z, sigma);
    }
    Ok(next)
}

/// Recover the clean estimate implied by two consecutive deterministic
/// iterates: solves `x_t = sqrt(a_t) x0 + sqrt(1-a_t) e` and
/// `x_prev = sqrt(a_prev) x0 + sqrt(1-a_prev) e` for `x0` per cell.
pub fn implied_x0(x_t: &LatentGrid, x_prev: &LatentGrid, t: usize, schedule: &DiffusionSchedule) -> LatentGrid {
    let a_t = schedule.alpha_bar(t);
    let a_p = schedule.alpha_bar(t - 1);
    let (st, nt) = (a_t.sqrt(), (1.0 - a_t).sqrt());
    let (sp, np) = (a_p.sqrt(), (1.0 - a_p).sqrt());
    let det = nt * sp - np * st;
    x_prev.axpby(nt / det, x_t, -np / det)
}
