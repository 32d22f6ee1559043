use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    /// Betas evenly spaced over `[1e-4, 2e-2]`; only reaches near-pure noise
    /// for long schedules (`alpha_bar[50]` is about 0.6).
    Linear,
    /// Reaches `alpha_bar[T]` close to 0 for any `T`.
    #[default]
    Cosine,
}

pub const LINEAR_BETA_START: f64 = 1e-4;
pub const LINEAR_BETA_END: f64 = 2e-2;
pub const COSINE_OFFSET: f64 = 0.008;
pub const COSINE_MAX_BETA: f64 = 0.999;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("a schedule needs at least one step")]
    NoSteps,
    #[error("alpha_bar[0] must be 1, got {0}")]
    NotAnchored(f64),
    #[error("alpha_bar[{index}] = {value} is not strictly below its predecessor or leaves (0, 1]")]
    NotDecreasing { index: usize, value: f64 },
}

/// Cumulative signal coefficients `alpha_bar[0..=T]`, with `alpha_bar[0] = 1`
/// and strictly decreasing afterwards.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffusionSchedule {
    alpha_bar: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self, ScheduleError> {
        if alpha_bar.len() < 2 {
            return Err(ScheduleError::NoSteps);
        }
        if alpha_bar[0] != 1.0 {
            return Err(ScheduleError::NotAnchored(alpha_bar[0]));
        }
        for i in 1..alpha_bar.len() {
            let v = alpha_bar[i];
            if !(v > 0.0 && v < alpha_bar[i - 1]) {
                return Err(ScheduleError::NotDecreasing { index: i, value: v });
            }
        }
        Ok(Self { alpha_bar })
    }

    /// Number of denoising steps `T`.
    pub fn steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }
}

fn from_betas(betas: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut out = vec![1.0];
    let mut acc = 1.0;
    for b in betas {
        acc *= 1.0 - b;
        out.push(acc);
    }
    out
}

/// Variance-preserving schedule with `steps` steps.
///
/// Linear: betas evenly spaced over `[1e-4, 2e-2]`. Cosine: the squared-cosine
/// curve with offset 0.008, expressed as betas clipped at 0.999.
pub fn make_schedule(steps: usize, kind: ScheduleKind) -> Result<DiffusionSchedule, ScheduleError> {
    if steps == 0 {
        return Err(ScheduleError::NoSteps);
    }
    let alpha_bar = match kind {
        ScheduleKind::Linear => from_betas((1..=steps).map(|s| {
            if steps == 1 {
                LINEAR_BETA_START
            } else {
                LINEAR_BETA_START + (LINEAR_BETA_END - LINEAR_BETA_START) * (s - 1) as f64 / (steps - 1) as f64
            }
        })),
        ScheduleKind::Cosine => {
            let f = |t: usize| {
                let x = (t as f64 / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * std::f64::consts::FRAC_PI_2;
                x.cos().powi(2)
            };
            let f0 = f(0);
            from_betas((1..=steps).map(|t| (1.0 - (f(t) / f0) / (f(t - 1) / f0)).min(COSINE_MAX_BETA)))
        }
    };
    DiffusionSchedule::from_alpha_bar(alpha_bar)
}
