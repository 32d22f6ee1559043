use super::sampler::{ddim_step, Sampler};
use super::schedule::DiffusionSchedule;
use super::{guide, BackendError, Denoiser, DenoiserRequest};
use crate::conditioning::TagCondition;
use crate::tensor::LatentGrid;
use crate::tiling::crop;

/// The noise prediction that is exact if the clean latent is `target`:
/// `(latent - sqrt(a_t) * target) / sqrt(1 - a_t)`.
pub fn toy_epsilon(
    latent: &LatentGrid,
    t: usize,
    target: &LatentGrid,
    schedule: &DiffusionSchedule,
) -> Result<LatentGrid, BackendError> {
    if latent.dims() != target.dims() {
        return Err(BackendError::ShapeMismatch {
            expected: target.dims(),
            actual: latent.dims(),
        });
    }
    if t > schedule.steps() {
        return Err(BackendError::TimestepOutOfRange {
            t,
            steps: schedule.steps(),
        });
    }
    let a = schedule.alpha_bar(t);
    if a >= 1.0 {
        return Err(BackendError::DegenerateSchedule { t });
    }
    let inv = 1.0 / (1.0 - a).sqrt();
    Ok(latent.axpby(inv, target, -a.sqrt() * inv))
}

/// Sum over tags of a stable per-tag value in `[0, 1)` (FNV-1a of the text).
pub fn tag_weight(condition: &TagCondition) -> f64 {
    condition
        .tags()
        .iter()
        .map(|t| {
            let h = t.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
            (h >> 11) as f64 / (1u64 << 53) as f64
        })
        .sum()
}

/// Analytic denoiser that pulls every window towards the matching crop of a
/// fixed parent-sized target.
///
/// With zero coupling (the default) it ignores its condition, so guidance is
/// a no-op and overlapping windows always agree. A coupling `k` adds
/// `k * (window mean + tag weight)` to the clean estimate of the conditional
/// branch, which makes the result depend on the window context and tags.
/// See [`tag_weight`].
#[derive(Debug, Clone)]
pub struct ToyDenoiser {
    target: LatentGrid,
    sampler: Sampler,
    coupling: f64,
}

impl ToyDenoiser {
    pub fn new(target: LatentGrid) -> Self {
        Self {
            target,
            sampler: Sampler::Deterministic,
            coupling: 0.0,
        }
    }

    pub fn with_coupling(mut self, k: f64) -> Self {
        self.coupling = k;
        self
    }

    pub fn with_sampler(mut self, sampler: Sampler) -> Self {
        self.sampler = sampler;
        self
    }

    pub fn target(&self) -> &LatentGrid {
        &self.target
    }
}

impl Denoiser for ToyDenoiser {
    fn denoise_step(&self, req: &DenoiserRequest<'_>, schedule: &DiffusionSchedule) -> Result<LatentGrid, BackendError> {
        req.validate(schedule, None)?;
        let target = crop(&self.target, &req.window)?;
        let uncond = toy_epsilon(req.latent, req.timestep, &target, schedule)?;
        let cond = if self.coupling == 0.0 {
            uncond.clone()
        } else {
            let data = req.latent.data();
            let mean = data.iter().sum::<f64>() / data.len() as f64;
            let shift = self.coupling * (mean + tag_weight(req.condition));
            let (w, h, c) = target.dims();
            let shifted = LatentGrid::new(w, h, c, target.data().iter().map(|v| v + shift).collect())
                .expect("finite shift of a finite target");
            toy_epsilon(req.latent, req.timestep, &shifted, schedule)?
        };
        let eps = guide(&uncond, &cond, req.guidance_scale);
        ddim_step(req.latent, &eps, req.timestep, schedule, self.sampler, req.noise)
    }
}
