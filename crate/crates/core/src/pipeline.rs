//! End-to-end tiled super-resolution.
//!
//! 1. Upsample the LR image to the target size and take its latent geometry.
//! 2. Extract one tag condition per window (and a global one) up front.
//! 3. Start from seeded Gaussian noise and, for every timestep, denoise all
//!    windows from the same snapshot, then average overlaps into the next
//!    latent.
//! 4. Decode the final latent.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::sampler::implied_x0;
use crate::backends::schedule::ScheduleError;
use crate::backends::{make_schedule, BackendError, Denoiser, DenoiserRequest, Sampler, ScheduleKind};
use crate::conditioning::{assign_local_prompts, unique_tag_count, ConditioningError, PromptExtractor, TagCondition};
use crate::fusion::{FusionAccumulator, FusionError};
use crate::metrics::{evaluate, EvalOptions, MetricError, MetricReport};
use crate::noise::{seeded_noise, seeded_noise_stream};
use crate::tensor::{bicubic_resize, decode, encode, CodecSpec, ImageGrid, LatentGrid, TensorError};
use crate::tiling::{crop, plan_tiles_with, TilePlan, TilingError, WindowSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    /// Each window uses the tags of its own patch.
    #[default]
    Local,
    /// Every window uses the whole-image tags.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DepositOrder {
    /// Deposit in plan order: bit-identical for any worker count.
    #[default]
    Canonical,
    /// Per-worker partial sums merged at the end: equal to canonical within
    /// floating-point reordering.
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// Pure standard-normal start.
    #[default]
    Noise,
    /// The encoded upsampled input, noised to the first timestep.
    NoisedInput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub window: usize,
    pub stride: usize,
    pub scale: usize,
    pub steps: usize,
    pub schedule: ScheduleKind,
    pub sampler: Sampler,
    pub guidance_scale: f64,
    pub seed: u64,
    pub prompt_mode: PromptMode,
    /// Worker threads for window denoising; 0 uses all cores.
    pub workers: usize,
    pub deposit_order: DepositOrder,
    pub init: InitMode,
    /// Permit `stride > window` (gapped plans) for ablations.
    pub allow_wide_stride: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            window: 64,
            stride: 32,
            scale: 4,
            steps: 50,
            schedule: ScheduleKind::Cosine,
            sampler: Sampler::Deterministic,
            guidance_scale: 5.5,
            seed: 0,
            prompt_mode: PromptMode::Local,
            workers: 1,
            deposit_order: DepositOrder::Canonical,
            init: InitMode::Noise,
            allow_wide_stride: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if self.window == 0 {
            return bad("window must be positive");
        }
        if self.stride == 0 {
            return bad("stride must be positive");
        }
        if self.stride > self.window && !self.allow_wide_stride {
            return bad("stride must not exceed window (set allow_wide_stride for ablations)");
        }
        if self.scale == 0 {
            return bad("scale must be at least 1");
        }
        if self.steps == 0 {
            return bad("steps must be at least 1");
        }
        if !self.guidance_scale.is_finite() || self.guidance_scale < 0.0 {
            return bad("guidance scale must be finite and non-negative");
        }
        if let Sampler::Stochastic { eta } = self.sampler {
            if !(eta > 0.0 && eta <= 1.0) {
                return bad("stochastic eta must lie in (0, 1]");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("geometry: {0}")]
    Geometry(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Tiling(#[from] TilingError),
    #[error(transparent)]
    Conditioning(#[from] ConditioningError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("backend declares windows of {declared:?} but the run needs {required:?}")]
    BackendGeometry {
        declared: (usize, usize, usize),
        required: (usize, usize, usize),
    },
    #[error("backend failed at timestep {timestep}, window {window}: {source}")]
    Backend {
        timestep: usize,
        window: usize,
        #[source]
        source: BackendError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub timestep: usize,
    pub elapsed_ms: f64,
    /// Max-abs distance of the implied clean latent to the reference latent.
    pub x0_max_abs: Option<f64>,
    #[serde(serialize_with = "ser_opt_db")]
    pub x0_psnr: Option<f64>,
}

fn ser_opt_db<S: serde::Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(x) if x.is_infinite() => s.serialize_str("inf"),
        Some(x) => s.serialize_f64(*x),
        None => s.serialize_none(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub config: PipelineConfig,
    pub codec: CodecSpec,
    pub input_size: (usize, usize),
    pub output_size: (usize, usize),
    pub latent_dims: (usize, usize, usize),
    pub plan: TilePlan,
    pub global_tags: String,
    pub window_tags: Vec<String>,
    pub fallback_windows: Vec<usize>,
    pub global_tag_count: usize,
    pub local_unique_tag_count: usize,
    pub steps: Vec<StepRecord>,
    pub total_ms: f64,
    pub final_metrics: Option<MetricReport>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn write_trajectory_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["timestep", "elapsed_ms", "x0_max_abs", "x0_psnr"])?;
        let opt = |v: Option<f64>| match v {
            Some(x) if x.is_infinite() => "inf".to_string(),
            Some(x) => format!("{x:.9e}"),
            None => String::new(),
        };
        for s in &self.steps {
            w.write_record([
                s.timestep.to_string(),
                format!("{:.3}", s.elapsed_ms),
                opt(s.x0_max_abs),
                opt(s.x0_psnr),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub image: ImageGrid,
    pub latent: LatentGrid,
    pub report: RunReport,
}

/// The latent geometry a run will use, checked up front.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunGeometry {
    pub output_width: usize,
    pub output_height: usize,
    pub latent_width: usize,
    pub latent_height: usize,
}

pub fn run_geometry(lr_w: usize, lr_h: usize, config: &PipelineConfig, codec: CodecSpec) -> Result<RunGeometry, PipelineError> {
    let f = codec.spatial_factor;
    let (ow, oh) = (lr_w * config.scale, lr_h * config.scale);
    if ow % f != 0 || oh % f != 0 {
        return Err(PipelineError::Geometry(format!(
            "output {ow}x{oh} (input {lr_w}x{lr_h} x{}) is not divisible by codec factor {f}",
            config.scale
        )));
    }
    let (lw, lh) = (ow / f, oh / f);
    if lw < config.window || lh < config.window {
        return Err(PipelineError::Geometry(format!(
            "latent {lw}x{lh} is smaller than the {w}x{w} window; input must be at least {m}x{m}",
            w = config.window,
            m = (config.window * f).div_ceil(config.scale)
        )));
    }
    Ok(RunGeometry {
        output_width: ow,
        output_height: oh,
        latent_width: lw,
        latent_height: lh,
    })
}

#[allow(clippy::too_many_arguments)]
fn denoise_window(
    backend: &dyn Denoiser,
    current: &LatentGrid,
    noise: Option<&LatentGrid>,
    window: &WindowSpec,
    t: usize,
    condition: &TagCondition,
    config: &PipelineConfig,
    schedule: &crate::backends::DiffusionSchedule,
) -> Result<LatentGrid, PipelineError> {
    let wrap = |source: BackendError| PipelineError::Backend {
        timestep: t,
        window: window.index,
        source,
    };
    let latent = crop(current, window)?;
    let noise = noise.map(|z| crop(z, window)).transpose()?;
    let req = DenoiserRequest {
        latent: &latent,
        window: *window,
        timestep: t,
        condition,
        guidance_scale: config.guidance_scale,
        noise: noise.as_ref(),
    };
    backend.denoise_step(&req, schedule).map_err(wrap)
}

/// Run tiled diffusion on `lr`. When `reference` (an HR image of the output
/// size) is given, the report carries a per-step trajectory and final metrics.
pub fn run(
    lr: &ImageGrid,
    config: &PipelineConfig,
    backend: &dyn Denoiser,
    extractor: &dyn PromptExtractor,
    codec: CodecSpec,
    reference: Option<&ImageGrid>,
) -> Result<RunOutput, PipelineError> {
    let started = Instant::now();
    config.validate()?;
    let geo = run_geometry(lr.width(), lr.height(), config, codec)?;

    let upsampled = if config.scale == 1 {
        lr.clone()
    } else {
        bicubic_resize(lr, geo.output_width, geo.output_height)
            .map_err(|e| PipelineError::Geometry(e.to_string()))?
    };
    let encoded = encode(&upsampled, codec)?;
    let (lw, lh, channels) = encoded.dims();

    let plan = plan_tiles_with(lw, lh, config.window, config.window, config.stride, config.allow_wide_stride)?;
    let required = (config.window, config.window, channels);
    if let Some(declared) = backend.declared_dims() {
        if declared != required {
            return Err(PipelineError::BackendGeometry { declared, required });
        }
    }

    let prompts = assign_local_prompts(extractor, &upsampled, &plan, codec)?;
    let conditions: Vec<&TagCondition> = match config.prompt_mode {
        PromptMode::Local => prompts.per_window.iter().collect(),
        PromptMode::Global => vec![&prompts.global; plan.len()],
    };

    let schedule = make_schedule(config.steps, config.schedule)?;
    let mut current = seeded_noise(lw, lh, channels, config.seed);
    if config.init == InitMode::NoisedInput {
        let a = schedule.alpha_bar(schedule.steps());
        current = encoded.axpby(a.sqrt(), &current, (1.0 - a).sqrt());
    }

    let reference_latent = match reference {
        Some(r) => {
            if (r.width(), r.height()) != (geo.output_width, geo.output_height) {
                return Err(PipelineError::Geometry(format!(
                    "reference is {}x{}, output will be {}x{}",
                    r.width(),
                    r.height(),
                    geo.output_width,
                    geo.output_height
                )));
            }
            Some(encode(r, codec)?)
        }
        None => None,
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))?;

    let mut steps = Vec::with_capacity(config.steps);
    for t in (1..=schedule.steps()).rev() {
        let step_start = Instant::now();
        let noise = match config.sampler {
            Sampler::Stochastic { .. } => Some(seeded_noise_stream(lw, lh, channels, config.seed, t as u64)),
            Sampler::Deterministic => None,
        };
        let one = |w: &WindowSpec| {
            denoise_window(backend, &current, noise.as_ref(), w, t, conditions[w.index], config, &schedule)
        };

        let acc = match config.deposit_order {
            DepositOrder::Canonical => {
                let outputs: Vec<LatentGrid> = if config.workers == 1 {
                    plan.windows.iter().map(one).collect::<Result<_, _>>()?
                } else {
                    pool.install(|| plan.windows.par_iter().map(one).collect::<Result<_, _>>())?
                };
                let mut acc = FusionAccumulator::new(lw, lh, channels);
                for (w, out) in plan.windows.iter().zip(&outputs) {
                    acc.deposit(w, out)?;
                }
                acc
            }
            DepositOrder::Free => pool.install(|| {
                plan.windows
                    .par_iter()
                    .try_fold(
                        || FusionAccumulator::new(lw, lh, channels),
                        |mut acc, w| {
                            let out = one(w)?;
                            acc.deposit(w, &out)?;
                            Ok::<_, PipelineError>(acc)
                        },
                    )
                    .try_reduce(
                        || FusionAccumulator::new(lw, lh, channels),
                        |mut a, b| {
                            a.merge(&b)?;
                            Ok(a)
                        },
                    )
            })?,
        };
        let next = acc.finalize()?;

        let (x0_max_abs, x0_psnr) = match (&reference_latent, config.sampler, reference) {
            (Some(target), Sampler::Deterministic, Some(r)) => {
                let x0 = implied_x0(&current, &next, t, &schedule);
                let psnr = crate::metrics::psnr(&decode(&x0, codec)?, r, 1.0)?;
                (Some(x0.max_abs_diff(target)), Some(psnr))
            }
            _ => (None, None),
        };
        current = next;
        steps.push(StepRecord {
            timestep: t,
            elapsed_ms: step_start.elapsed().as_secs_f64() * 1e3,
            x0_max_abs,
            x0_psnr,
        });
    }

    let image = decode(&current, codec)?;
    let final_metrics = match reference {
        Some(r) => Some(evaluate(&image, r, EvalOptions::default())?),
        None => None,
    };

    let report = RunReport {
        config: config.clone(),
        codec,
        input_size: (lr.width(), lr.height()),
        output_size: (image.width(), image.height()),
        latent_dims: (lw, lh, channels),
        global_tags: prompts.global.joined(),
        window_tags: prompts.per_window.iter().map(|t| t.joined()).collect(),
        fallback_windows: prompts.fallback_windows.clone(),
        global_tag_count: prompts.global.len(),
        local_unique_tag_count: unique_tag_count(&prompts),
        plan,
        steps,
        total_ms: started.elapsed().as_secs_f64() * 1e3,
        final_metrics,
    };
    Ok(RunOutput {
        image,
        latent: current,
        report,
    })
}
