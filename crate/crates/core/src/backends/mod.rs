//! The denoiser contract and its implementations.
//!
//! A [`Denoiser`] advances one window latent from timestep `t` to `t - 1`
//! under a tag condition. [`ToyDenoiser`] is an analytic oracle whose noise
//! prediction is exact for a known clean latent, [`EchoDenoiser`] returns
//! its input, and [`ExternalDenoiser`] forwards requests to a model server
//! over the wire protocol in [`crate::protocol`].

pub mod external;
pub mod sampler;
pub mod schedule;
pub mod toy;

use thiserror::Error;

use crate::conditioning::TagCondition;
use crate::protocol::ProtocolError;
use crate::tensor::LatentGrid;
use crate::tiling::{TilingError, WindowSpec};

pub use external::{BridgeClient, ExternalDenoiser, ExternalTagger};
pub use sampler::Sampler;
pub use schedule::{make_schedule, DiffusionSchedule, ScheduleKind};
pub use toy::{tag_weight, toy_epsilon, ToyDenoiser};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("latent shape {actual:?} does not match expected {expected:?}")]
    ShapeMismatch {
        expected: (usize, usize, usize),
        actual: (usize, usize, usize),
    },
    #[error("timestep {t} outside 1..={steps}")]
    TimestepOutOfRange { t: usize, steps: usize },
    #[error("alpha_bar at t={t} is 1; the noise prediction is undefined")]
    DegenerateSchedule { t: usize },
    #[error("guidance scale must be finite and non-negative, got {0}")]
    InvalidGuidance(f64),
    #[error("stochastic sampling needs a noise field for this step")]
    MissingNoise,
    #[error(transparent)]
    Window(#[from] TilingError),
    #[error("protocol: {0}")]
    Protocol(#[from] ProtocolError),
    #[error("server reported status {status}: {message}")]
    Remote { status: u8, message: String },
}

/// Everything a backend needs for one window step. Borrowed, so backends
/// cannot mutate the caller's state.
#[derive(Debug, Clone, Copy)]
pub struct DenoiserRequest<'a> {
    pub latent: &'a LatentGrid,
    /// Where this latent sits in the parent grid.
    pub window: WindowSpec,
    pub timestep: usize,
    pub condition: &'a TagCondition,
    pub guidance_scale: f64,
    /// Fresh noise for stochastic samplers, cropped to the window.
    pub noise: Option<&'a LatentGrid>,
}

impl DenoiserRequest<'_> {
    /// Checks shared by every backend: timestep range, guidance scale, and
    /// latent shape against the window and any declared dims.
    pub fn validate(&self, schedule: &DiffusionSchedule, declared: Option<(usize, usize, usize)>) -> Result<(), BackendError> {
        if self.timestep == 0 || self.timestep > schedule.steps() {
            return Err(BackendError::TimestepOutOfRange {
                t: self.timestep,
                steps: schedule.steps(),
            });
        }
        if !self.guidance_scale.is_finite() || self.guidance_scale < 0.0 {
            return Err(BackendError::InvalidGuidance(self.guidance_scale));
        }
        let actual = self.latent.dims();
        if (actual.0, actual.1) != (self.window.width, self.window.height) {
            return Err(BackendError::ShapeMismatch {
                expected: (self.window.width, self.window.height, actual.2),
                actual,
            });
        }
        if let Some(expected) = declared {
            if expected != actual {
                return Err(BackendError::ShapeMismatch { expected, actual });
            }
        }
        Ok(())
    }
}

pub trait Denoiser: Send + Sync {
    /// Window dims `(w, h, channels)` the backend insists on, if any.
    fn declared_dims(&self) -> Option<(usize, usize, usize)> {
        None
    }

    fn denoise_step(&self, request: &DenoiserRequest<'_>, schedule: &DiffusionSchedule) -> Result<LatentGrid, BackendError>;
}

/// Returns its input unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoDenoiser;

impl Denoiser for EchoDenoiser {
    fn denoise_step(&self, request: &DenoiserRequest<'_>, schedule: &DiffusionSchedule) -> Result<LatentGrid, BackendError> {
        request.validate(schedule, None)?;
        Ok(request.latent.clone())
    }
}

/// Classifier-free guidance mix `uncond + s * (cond - uncond)`.
pub fn guide(uncond: &LatentGrid, cond: &LatentGrid, scale: f64) -> LatentGrid {
    let diff = cond.axpby(1.0, uncond, -1.0);
    uncond.axpby(1.0, &diff, scale)
}
