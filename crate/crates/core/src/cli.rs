//! Command-line front end.
//!
//! Exit codes: 0 ok, 1 usage or invalid job, 2 I/O, 3 backend or protocol.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::backends::{BridgeClient, Denoiser, EchoDenoiser, ExternalDenoiser, ExternalTagger, Sampler, ScheduleKind, ToyDenoiser};
use crate::conditioning::analytics::{analyze_image, write_tag_csv, TagAnalyticsRow};
use crate::conditioning::{MockTagger, PromptExtractor};
use crate::io::{load_image, save_image, BitDepth, ImageIoError};
use crate::metrics::{evaluate, write_metrics_csv, EvalOptions, MetricRow};
use crate::pipeline::{run, run_geometry, DepositOrder, InitMode, PipelineConfig, PipelineError, PromptMode};
use crate::protocol::{echo_handler, serve_connection, EchoServer, Handshake};
use crate::tensor::{encode, CodecSpec};
use crate::tiling::plan_tiles_with;

pub const BRIDGE_ENV: &str = "TILED_SR_BRIDGE";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "tiled-sr", version, about = "Tiled latent diffusion super-resolution with per-window tag prompts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Super-resolve one or more images.
    Run(RunArgs),
    /// Count global vs per-window unique tags.
    AnalyzeTags(AnalyzeArgs),
    /// PSNR/SSIM between SR and HR images.
    Eval(EvalArgs),
    /// Print the tile plan for a latent size.
    Plan(PlanArgs),
    /// Serve the wire protocol in identity-echo mode.
    EchoServer(EchoArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SamplerArg {
    Deterministic,
    Stochastic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DepthArg {
    #[value(name = "8")]
    Eight,
    #[value(name = "16")]
    Sixteen,
}

impl From<DepthArg> for BitDepth {
    fn from(d: DepthArg) -> Self {
        match d {
            DepthArg::Eight => BitDepth::Eight,
            DepthArg::Sixteen => BitDepth::Sixteen,
        }
    }
}

/// Pipeline settings; unset flags fall back to the config file, then defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct PipelineArgs {
    /// TOML file with pipeline settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Window side in latent cells.
    #[arg(long)]
    pub window: Option<usize>,
    /// Window stride in latent cells.
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub scale: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, value_enum)]
    pub schedule: Option<ScheduleKind>,
    #[arg(long, value_enum)]
    pub sampler: Option<SamplerArg>,
    /// Noise scale for the stochastic sampler.
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub guidance: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub prompt_mode: Option<PromptMode>,
    /// Worker threads; 0 uses all cores.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, value_enum)]
    pub order: Option<DepositOrder>,
    #[arg(long, value_enum)]
    pub init: Option<InitMode>,
    #[arg(long)]
    pub allow_wide_stride: bool,
}

impl PipelineArgs {
    pub fn resolve(&self) -> Result<PipelineConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
                toml::from_str::<PipelineConfig>(&text)
                    .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?
            }
            None => PipelineConfig::default(),
        };
        macro_rules! take {
            ($flag:ident => $field:ident) => {
                if let Some(v) = self.$flag {
                    cfg.$field = v;
                }
            };
        }
        take!(window => window);
        take!(stride => stride);
        take!(scale => scale);
        take!(steps => steps);
        take!(schedule => schedule);
        take!(guidance => guidance_scale);
        take!(seed => seed);
        take!(prompt_mode => prompt_mode);
        take!(workers => workers);
        take!(order => deposit_order);
        take!(init => init);
        if self.allow_wide_stride {
            cfg.allow_wide_stride = true;
        }
        match (self.sampler, self.eta) {
            (Some(SamplerArg::Deterministic), _) => cfg.sampler = Sampler::Deterministic,
            (Some(SamplerArg::Stochastic), eta) => cfg.sampler = Sampler::Stochastic { eta: eta.unwrap_or(1.0) },
            (None, Some(eta)) => cfg.sampler = Sampler::Stochastic { eta },
            (None, None) => {}
        }
        cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Input images or directories of PNGs.
    #[arg(long, num_args = 1.., required = true)]
    pub input: Vec<PathBuf>,
    #[arg(long, short)]
    pub output: PathBuf,
    /// `toy:<hr file or dir>`, `echo`, or `bridge:<address>`.
    #[arg(long, default_value = "echo")]
    pub backend: String,
    /// Context coupling for the toy backend; 0 keeps it exact.
    #[arg(long, default_value_t = 0.0)]
    pub toy_coupling: f64,
    /// `mock` or `bridge:<address>`.
    #[arg(long, default_value = "mock")]
    pub tags: String,
    /// HR reference file or directory; enables metrics and trajectories.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "16")]
    pub bit_depth: DepthArg,
    #[arg(long, default_value_t = 8)]
    pub codec_factor: usize,
    #[arg(long)]
    pub y_channel: bool,
    #[arg(long, default_value_t = 0)]
    pub shave_border: usize,
    /// Stop at the first failed image.
    #[arg(long)]
    pub fail_fast: bool,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long, num_args = 0..)]
    pub input: Vec<PathBuf>,
    /// CSV destination; stdout if omitted.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value = "mock")]
    pub tags: String,
    #[arg(long, default_value_t = 64)]
    pub window: usize,
    #[arg(long, default_value_t = 32)]
    pub stride: usize,
    #[arg(long, default_value_t = 8)]
    pub codec_factor: usize,
    #[arg(long)]
    pub fail_fast: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// SR image or directory.
    #[arg(long)]
    pub sr: PathBuf,
    /// HR image or directory; directory entries are paired by file name.
    #[arg(long)]
    pub hr: PathBuf,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value = "tiled-sr")]
    pub method: String,
    #[arg(long)]
    pub y_channel: bool,
    #[arg(long, default_value_t = 0)]
    pub shave_border: usize,
    /// `bridge:<address>` serving a perceptual metric.
    #[arg(long)]
    pub lpips: Option<String>,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Latent width.
    #[arg(long)]
    pub width: usize,
    /// Latent height.
    #[arg(long)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub window: usize,
    #[arg(long, default_value_t = 32)]
    pub stride: usize,
    #[arg(long)]
    pub allow_wide_stride: bool,
}

#[derive(Debug, Args)]
pub struct EchoArgs {
    #[arg(long, default_value = "127.0.0.1:7341")]
    pub bind: String,
    #[arg(long, default_value_t = 64)]
    pub window_w: u32,
    #[arg(long, default_value_t = 64)]
    pub window_h: u32,
    #[arg(long, default_value_t = 4)]
    pub channels: u32,
    /// Serve a single session on stdin/stdout instead of TCP.
    #[arg(long)]
    pub stdio: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(m: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: m.into() }
    }
    pub fn io(m: impl Into<String>) -> Self {
        Self { code: EXIT_IO, message: m.into() }
    }
    pub fn backend(m: impl Into<String>) -> Self {
        Self { code: EXIT_BACKEND, message: m.into() }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<ImageIoError> for CliError {
    fn from(e: ImageIoError) -> Self {
        match e {
            ImageIoError::UnsupportedChannels(_) | ImageIoError::Tensor(_) => CliError::usage(e.to_string()),
            _ => CliError::io(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Backend { .. } | PipelineError::BackendGeometry { .. } => CliError::backend(e.to_string()),
            PipelineError::Conditioning(_) => CliError::backend(e.to_string()),
            _ => CliError::usage(e.to_string()),
        }
    }
}

/// Parse and execute; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

pub fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run(a) => cmd_run(&a),
        Command::AnalyzeTags(a) => cmd_analyze_tags(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Plan(a) => cmd_plan(&a),
        Command::EchoServer(a) => cmd_echo_server(&a),
    }
}

/// Expand files and directories into PNG paths; directories are listed in
/// lexicographic order.
pub fn collect_inputs(paths: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| CliError::io(format!("{}: {e}", p.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|e| e.is_file() && e.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
                .collect();
            entries.sort();
            out.extend(entries);
        } else if p.is_file() {
            out.push(p.clone());
        } else {
            return Err(CliError::io(format!("input not found: {}", p.display())));
        }
    }
    Ok(out)
}

fn image_id(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// A file is used as-is; a directory is joined with the input's file name.
fn companion(base: &Path, input: &Path) -> PathBuf {
    if base.is_dir() {
        base.join(input.file_name().unwrap_or_default())
    } else {
        base.to_path_buf()
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().map(|e| e.to_string_lossy().into_owned()).unwrap_or_default()
    ));
    fs::write(&tmp, bytes)
        .and_then(|_| fs::rename(&tmp, path))
        .map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn bridge_address(selector_rest: &str) -> String {
    std::env::var(BRIDGE_ENV).ok().filter(|s| !s.is_empty()).unwrap_or_else(|| selector_rest.to_string())
}

fn open_bridge(rest: &str, connections: usize) -> Result<Arc<BridgeClient>, CliError> {
    let addr = bridge_address(rest);
    BridgeClient::open(&addr, connections.max(1), Some(Duration::from_secs(600)))
        .map(Arc::new)
        .map_err(|e| CliError::backend(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSelector {
    Toy(PathBuf),
    Echo,
    Bridge(String),
}

impl std::str::FromStr for BackendSelector {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        if s == "echo" {
            Ok(Self::Echo)
        } else if let Some(p) = s.strip_prefix("toy:").filter(|p| !p.is_empty()) {
            Ok(Self::Toy(PathBuf::from(p)))
        } else if let Some(a) = s.strip_prefix("bridge:") {
            Ok(Self::Bridge(a.to_string()))
        } else {
            Err(CliError::usage(format!(
                "bad backend selector {s:?}: expected toy:<path>, echo or bridge:<address>"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TaggerSelector {
    Mock,
    Bridge(String),
}

impl std::str::FromStr for TaggerSelector {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "mock" => Ok(Self::Mock),
            _ => match s.strip_prefix("bridge:") {
                Some(a) => Ok(Self::Bridge(a.to_string())),
                None => Err(CliError::usage(format!("bad tagger selector {s:?}: expected mock or bridge:<address>"))),
            },
        }
    }
}

fn make_tagger(sel: &TaggerSelector, connections: usize) -> Result<Box<dyn PromptExtractor>, CliError> {
    Ok(match sel {
        TaggerSelector::Mock => Box::new(MockTagger::default()),
        TaggerSelector::Bridge(a) => Box::new(ExternalTagger::new(open_bridge(a, connections)?)),
    })
}

fn cmd_run(a: &RunArgs) -> Result<(), CliError> {
    let cfg = a.pipeline.resolve()?;
    let codec = CodecSpec::new(a.codec_factor).map_err(|e| CliError::usage(e.to_string()))?;
    let backend_sel: BackendSelector = a.backend.parse()?;
    let tagger_sel: TaggerSelector = a.tags.parse()?;
    let inputs = collect_inputs(&a.input)?;
    fs::create_dir_all(&a.output).map_err(|e| CliError::io(format!("{}: {e}", a.output.display())))?;

    let connections = if cfg.workers == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        cfg.workers
    };
    let shared: Option<Box<dyn Denoiser>> = match &backend_sel {
        BackendSelector::Echo => Some(Box::new(EchoDenoiser)),
        BackendSelector::Bridge(addr) => Some(Box::new(ExternalDenoiser::new(open_bridge(addr, connections)?))),
        BackendSelector::Toy(_) => None,
    };
    let tagger = make_tagger(&tagger_sel, connections)?;
    let opts = EvalOptions {
        y_channel: a.y_channel,
        shave_border: a.shave_border,
    };
    let method = match cfg.prompt_mode {
        PromptMode::Local => "local",
        PromptMode::Global => "global",
    };

    let mut rows = Vec::new();
    let mut worst = EXIT_OK;
    for path in &inputs {
        let id = image_id(path);
        let result = run_one(a, &cfg, codec, &backend_sel, shared.as_deref(), tagger.as_ref(), path, &id, opts);
        match result {
            Ok(Some(report)) => rows.push(MetricRow {
                image_id: id,
                method: method.into(),
                result: Ok(report),
            }),
            Ok(None) => {}
            Err(e) => {
                eprintln!("{}: {e}", path.display());
                worst = worst.max(e.code);
                if a.reference.is_some() {
                    rows.push(MetricRow {
                        image_id: id,
                        method: method.into(),
                        result: Err(e.message.clone()),
                    });
                }
                if a.fail_fast {
                    break;
                }
            }
        }
    }
    if a.reference.is_some() {
        let mut buf = Vec::new();
        write_metrics_csv(&rows, &mut buf).map_err(|e| CliError::io(e.to_string()))?;
        write_atomic(&a.output.join("metrics.csv"), &buf)?;
    }
    if worst == EXIT_OK {
        Ok(())
    } else {
        Err(CliError {
            code: worst,
            message: "one or more images failed".into(),
        })
    }
}

#[allow(clippy::too_many_arguments)]
fn run_one(
    a: &RunArgs,
    cfg: &PipelineConfig,
    codec: CodecSpec,
    backend_sel: &BackendSelector,
    shared: Option<&dyn Denoiser>,
    tagger: &dyn PromptExtractor,
    path: &Path,
    id: &str,
    opts: EvalOptions,
) -> Result<Option<crate::metrics::MetricReport>, CliError> {
    let lr = load_image(path)?;
    let geo = run_geometry(lr.width(), lr.height(), cfg, codec)?;
    let reference = match &a.reference {
        Some(base) => {
            let r = load_image(companion(base, path))?;
            if (r.width(), r.height()) != (geo.output_width, geo.output_height) {
                return Err(CliError::usage(format!(
                    "reference is {}x{}, output will be {}x{}",
                    r.width(),
                    r.height(),
                    geo.output_width,
                    geo.output_height
                )));
            }
            Some(r)
        }
        None => None,
    };
    let toy;
    let backend: &dyn Denoiser = match (backend_sel, shared) {
        (BackendSelector::Toy(base), _) => {
            let target = load_image(companion(base, path))?;
            if (target.width(), target.height()) != (geo.output_width, geo.output_height) {
                return Err(CliError::usage(format!(
                    "toy target is {}x{}, output will be {}x{}",
                    target.width(),
                    target.height(),
                    geo.output_width,
                    geo.output_height
                )));
            }
            if target.channels() != lr.channels() {
                return Err(CliError::usage(format!(
                    "toy target has {} channels, input has {}",
                    target.channels(),
                    lr.channels()
                )));
            }
            let target = encode(&target, codec).map_err(|e| CliError::usage(e.to_string()))?;
            toy = ToyDenoiser::new(target).with_sampler(cfg.sampler).with_coupling(a.toy_coupling);
            &toy
        }
        (_, Some(b)) => b,
        (_, None) => unreachable!("non-toy backends are shared"),
    };

    let out = run(&lr, cfg, backend, tagger, codec, reference.as_ref())?;
    save_image(&out.image, a.output.join(format!("{id}.png")), a.bit_depth.into())?;
    write_atomic(&a.output.join(format!("{id}.report.json")), out.report.to_json().as_bytes())?;
    match reference {
        Some(r) => {
            let mut buf = Vec::new();
            out.report.write_trajectory_csv(&mut buf).map_err(|e| CliError::io(e.to_string()))?;
            write_atomic(&a.output.join(format!("{id}.trajectory.csv")), &buf)?;
            let r = evaluate(&out.image, &r, opts).map_err(|e| CliError::usage(e.to_string()))?;
            Ok(Some(r))
        }
        None => Ok(None),
    }
}

fn cmd_analyze_tags(a: &AnalyzeArgs) -> Result<(), CliError> {
    let codec = CodecSpec::new(a.codec_factor).map_err(|e| CliError::usage(e.to_string()))?;
    let tagger = make_tagger(&a.tags.parse()?, 1)?;
    let inputs = collect_inputs(&a.input)?;
    let mut rows = Vec::with_capacity(inputs.len());
    let mut worst = EXIT_OK;
    for path in &inputs {
        let id = image_id(path);
        let row = load_image(path)
            .map_err(CliError::from)
            .and_then(|img| {
                analyze_image(tagger.as_ref(), &id, &img, a.window, a.stride, codec).map_err(|e| CliError::usage(e.to_string()))
            })
            .unwrap_or_else(|e| {
                eprintln!("{}: {e}", path.display());
                worst = worst.max(e.code);
                TagAnalyticsRow::failed(&id, &e)
            });
        let failed = row.error.is_some();
        rows.push(row);
        if failed && a.fail_fast {
            break;
        }
    }
    let mut buf = Vec::new();
    write_tag_csv(&rows, &mut buf).map_err(|e| CliError::io(e.to_string()))?;
    match &a.output {
        Some(p) => write_atomic(p, &buf)?,
        None => print!("{}", String::from_utf8_lossy(&buf)),
    }
    if worst == EXIT_OK {
        Ok(())
    } else {
        Err(CliError {
            code: worst,
            message: "one or more images failed".into(),
        })
    }
}

fn cmd_eval(a: &EvalArgs) -> Result<(), CliError> {
    let srs = collect_inputs(std::slice::from_ref(&a.sr))?;
    let opts = EvalOptions {
        y_channel: a.y_channel,
        shave_border: a.shave_border,
    };
    let lpips = match &a.lpips {
        Some(sel) => match sel.strip_prefix("bridge:") {
            Some(addr) => Some(open_bridge(addr, 1)?),
            None => return Err(CliError::usage(format!("bad lpips selector {sel:?}: expected bridge:<address>"))),
        },
        None => None,
    };
    let mut rows = Vec::with_capacity(srs.len());
    for sr_path in &srs {
        let hr_path = companion(&a.hr, sr_path);
        let result = (|| -> Result<_, CliError> {
            let sr = load_image(sr_path)?;
            let hr = load_image(&hr_path)?;
            let mut report = evaluate(&sr, &hr, opts).map_err(|e| CliError::usage(e.to_string()))?;
            if let Some(client) = &lpips {
                report.lpips = Some(client.metric(&sr, &hr).map_err(|e| CliError::backend(e.to_string()))?);
            }
            Ok(report)
        })();
        if let Err(e) = &result {
            eprintln!("{}: {e}", sr_path.display());
        }
        rows.push(MetricRow {
            image_id: image_id(sr_path),
            method: a.method.clone(),
            result: result.map_err(|e| e.message),
        });
    }
    let mut buf = Vec::new();
    write_metrics_csv(&rows, &mut buf).map_err(|e| CliError::io(e.to_string()))?;
    match &a.output {
        Some(p) => write_atomic(p, &buf),
        None => {
            print!("{}", String::from_utf8_lossy(&buf));
            Ok(())
        }
    }
}

fn cmd_plan(a: &PlanArgs) -> Result<(), CliError> {
    let plan = plan_tiles_with(a.width, a.height, a.window, a.window, a.stride, a.allow_wide_stride)
        .map_err(|e| CliError::usage(e.to_string()))?;
    print!("{}", plan.to_text());
    Ok(())
}

fn cmd_echo_server(a: &EchoArgs) -> Result<(), CliError> {
    let hs = Handshake {
        window_w: a.window_w,
        window_h: a.window_h,
        channels: a.channels,
    };
    if a.stdio {
        let stream = StdioStream {
            input: std::io::stdin().lock(),
            output: std::io::stdout().lock(),
        };
        return serve_connection(stream, hs, echo_handler).map_err(|e| CliError::backend(e.to_string()));
    }
    EchoServer::run_forever(&a.bind, hs, |m| eprintln!("{m}")).map_err(|e| CliError::io(format!("{}: {e}", a.bind)))
}

struct StdioStream<R, W> {
    input: R,
    output: W,
}

impl<R: std::io::Read, W> std::io::Read for StdioStream<R, W> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        self.input.read(buf)
    }
}

impl<R, W: std::io::Write> std::io::Write for StdioStream<R, W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.output.write(buf)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.output.flush()
    }
}
