//! Command-line interface: `fit`, `encode`, `decode`, `eval`, `ablate`,
//! `replay`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use gsimage_core::bitstream::{self, bits_per_pixel};
use gsimage_core::metrics::{ms_ssim, ms_ssim_scales, psnr};
use gsimage_core::quantizer::{compress, fake_quant_cloud};
use gsimage_core::trainer::{fit_with, LogRecord};
use gsimage_core::{render, ImagePlane, Parameterization, TrainConfig};

use crate::cloudfile::CloudFile;
use crate::io::{load_image, save_image};
use crate::manifest::{self, RunManifest};
use crate::report::{append_rows, flags_label, write_log, ResultRow};
use crate::timing::time_decode;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const IO: i32 = 3;
    pub const SELF_CHECK: i32 = 4;
    pub const BAD_MAGIC: i32 = 10;
    pub const UNSUPPORTED_VERSION: i32 = 11;
    pub const TRUNCATED: i32 = 12;
    pub const TRAILING_BYTES: i32 = 13;
    pub const MALFORMED: i32 = 14;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("self-check failed: {0}")]
    SelfCheck(String),
    #[error("manifest does not reproduce its recorded configuration")]
    ManifestMismatch,
}

#[derive(Debug, Parser)]
#[command(name = "gsimage", version, about = "Fit, compress and evaluate 2D Gaussian image representations")]
pub struct Cli {
    /// Worker threads; 1 gives bit-reproducible runs.
    #[arg(long, global = true, env = "GSIMAGE_WORKERS")]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Fit a Gaussian cloud to an image.
    Fit(FitArgs),
    /// Fit with quantization-aware fine-tuning and write a `.g2gs` stream.
    Encode(EncodeArgs),
    /// Decode a `.g2gs` stream to an image.
    Decode(DecodeArgs),
    /// Compare an image, cloud or stream against a reference.
    Eval(EvalArgs),
    /// Run ablation arms and write one CSV row per arm.
    Ablate(AblateArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

fn parse_param(s: &str) -> std::result::Result<Parameterization, String> {
    Parameterization::from_name(s).ok_or_else(|| format!("unknown parameterization '{s}' (direct, cholesky, rs)"))
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Maximum number of Gaussians M.
    #[arg(long, default_value_t = 5000)]
    pub max_gaussians: usize,
    /// Total iterations T; the growth, decay and warm-up schedule scales with it.
    #[arg(long, default_value_t = 50_000)]
    pub iterations: u32,
    #[arg(long, default_value = "direct", value_parser = parse_param)]
    pub param: Parameterization,
    /// CAF strength α.
    #[arg(long, default_value_t = 32.0)]
    pub alpha: f64,
    #[arg(long)]
    pub no_densify: bool,
    #[arg(long)]
    pub no_caf: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Learning rate for every attribute group.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_position: Option<f64>,
    #[arg(long)]
    pub lr_covariance: Option<f64>,
    #[arg(long)]
    pub lr_color: Option<f64>,
    #[arg(long, default_value_t = 6.0)]
    pub cutoff: f64,
    #[arg(long, default_value_t = 100)]
    pub log_every: u32,
    /// Print training progress to stderr.
    #[arg(short, long)]
    pub verbose: bool,
}

impl TrainArgs {
    pub fn to_config(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::for_iterations(self.iterations);
        cfg.max_gaussians = self.max_gaussians;
        cfg.parameterization = self.param;
        cfg.caf_alpha = self.alpha;
        cfg.enable_densification = !self.no_densify;
        cfg.enable_caf = !self.no_caf;
        cfg.seed = self.seed;
        if let Some(lr) = self.lr {
            cfg.lr_position = lr;
            cfg.lr_covariance = lr;
            cfg.lr_color = lr;
        }
        cfg.lr_position = self.lr_position.unwrap_or(cfg.lr_position);
        cfg.lr_covariance = self.lr_covariance.unwrap_or(cfg.lr_covariance);
        cfg.lr_color = self.lr_color.unwrap_or(cfg.lr_color);
        cfg.cutoff_sigmas = self.cutoff;
        cfg.log_interval = self.log_every;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Native cloud dump.
    #[arg(long)]
    pub out: PathBuf,
    /// Rendered image; defaults to `<out>.png`.
    #[arg(long)]
    pub render: Option<PathBuf>,
    /// Training log CSV.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Append a result row to this CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Iterations before quantization-aware fine-tuning starts.
    #[arg(long)]
    pub warmup: Option<u32>,
    /// Bit depths for position, covariance and color.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [12u8, 10, 6])]
    pub bits: Vec<u8>,
    /// Disable the `1/√(N·Q)` quantizer gradient scale.
    #[arg(long)]
    pub no_grad_scale: bool,
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Clone, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 9)]
    pub fps_repeats: usize,
    #[arg(long, default_value_t = 6.0)]
    pub cutoff: f64,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub reference: PathBuf,
    /// Image (`.png`, `.ppm`), cloud (`.g2cl`) or stream (`.g2gs`).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 9)]
    pub fps_repeats: usize,
    #[arg(long, default_value_t = 6.0)]
    pub cutoff: f64,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// `all` for the 12-arm factorial, or a comma list of `param:flags`
    /// with flags one of `d3+caf`, `d3`, `caf`, `none`.
    #[arg(long, default_value = "all")]
    pub arms: String,
    /// Budgets M to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = [5000usize])]
    pub budgets: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [0u64])]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

/// One ablation arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arm {
    pub param: Parameterization,
    pub densify: bool,
    pub caf: bool,
}

impl Arm {
    pub fn factorial() -> Vec<Arm> {
        let mut arms = Vec::new();
        for param in Parameterization::ALL {
            for densify in [true, false] {
                for caf in [true, false] {
                    arms.push(Arm { param, densify, caf });
                }
            }
        }
        arms
    }

    pub fn parse_list(list: &str) -> Result<Vec<Arm>> {
        if list == "all" {
            return Ok(Self::factorial());
        }
        list.split(',')
            .map(|item| {
                let (p, f) = item.split_once(':').context("arm must look like param:flags")?;
                let param = parse_param(p).map_err(anyhow::Error::msg)?;
                let (densify, caf) = match f {
                    "d3+caf" => (true, true),
                    "d3" => (true, false),
                    "caf" => (false, true),
                    "none" => (false, false),
                    other => bail!("unknown arm flags '{other}'"),
                };
                Ok(Arm { param, densify, caf })
            })
            .collect()
    }
}

fn image_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn progress(verbose: bool) -> impl FnMut(&LogRecord) {
    move |r: &LogRecord| {
        if verbose {
            eprintln!("iter {:>6}  loss {:.6}  psnr {:6.2} dB  n {}", r.iteration, r.loss, r.psnr, r.count);
        }
    }
}

/// MS-SSIM, or NaN when the image is too small for one scale.
fn ms_ssim_or_nan(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    if ms_ssim_scales(a.height(), a.width()) == 0 {
        return Ok(f64::NAN);
    }
    Ok(ms_ssim(a, b)?)
}

/// Summary printed by each command and returned to library callers.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub psnr: Option<f64>,
    pub ms_ssim: Option<f64>,
    pub bpp: Option<f64>,
    pub encode_seconds: Option<f64>,
    pub decode_fps: Option<f64>,
    pub count: Option<usize>,
    pub rows: Vec<ResultRow>,
}

fn write_manifest(m: &mut RunManifest, explicit: Option<&Path>, primary: &Path, outputs: Vec<PathBuf>) -> Result<()> {
    m.outputs = outputs;
    let path = explicit.map(Path::to_path_buf).unwrap_or_else(|| manifest::default_path(primary));
    m.write(&path)
}

pub fn cmd_fit(a: &FitArgs, args: Vec<String>, workers: usize) -> Result<Outcome> {
    let cfg = a.train.to_config()?;
    let gt = load_image(&a.input)?;
    let report = fit_with(&gt, &cfg, &mut progress(a.train.verbose))?;
    let rendered = render(&report.cloud, gt.dims(), cfg.cutoff_sigmas)?.clamped();
    let p = psnr(&rendered, &gt)?;
    let s = ms_ssim_or_nan(&rendered, &gt)?;

    let mut outputs = vec![a.out.clone()];
    CloudFile {
        height: gt.height(),
        width: gt.width(),
        cloud: report.cloud.clone(),
    }
    .write(&a.out)?;
    let render_path = a.render.clone().unwrap_or_else(|| a.out.with_extension("png"));
    save_image(&render_path, &rendered)?;
    outputs.push(render_path);
    if let Some(log) = &a.log {
        write_log(log, &report.history)?;
        outputs.push(log.clone());
    }
    let row = ResultRow {
        image_id: image_id(&a.input),
        max_gaussians: cfg.max_gaussians,
        iterations: cfg.total_iterations,
        variant: cfg.parameterization.name().to_owned(),
        flags: flags_label(cfg.enable_densification, cfg.enable_caf),
        psnr: p,
        ms_ssim: s,
        bpp: None,
        encode_s: report.encode_seconds,
        decode_fps: None,
    };
    if let Some(csv) = &a.csv {
        append_rows(csv, std::slice::from_ref(&row))?;
    }
    let mut m = RunManifest::new("fit", args, a.input.clone(), cfg, workers);
    write_manifest(&mut m, a.manifest.as_deref(), &a.out, outputs)?;
    println!("fit: {} primitives, PSNR {p:.3} dB, MS-SSIM {s:.5}", report.cloud.len());
    Ok(Outcome {
        psnr: Some(p),
        ms_ssim: Some(s),
        encode_seconds: report.encode_seconds,
        count: Some(report.cloud.len()),
        rows: vec![row],
        ..Outcome::default()
    })
}

pub fn cmd_encode(a: &EncodeArgs, args: Vec<String>, workers: usize) -> Result<Outcome> {
    let mut cfg = a.train.to_config()?;
    if let Some(w) = a.warmup {
        cfg.warmup_iterations = w;
    }
    cfg.bit_depths = a.bits.clone().try_into().map_err(|_| anyhow::anyhow!("--bits needs three values"))?;
    cfg.lsq_grad_scale = !a.no_grad_scale;
    cfg.validate()?;
    let gt = load_image(&a.input)?;

    let start = Instant::now();
    let outcome = compress(&gt, &cfg, &mut progress(a.train.verbose))?;
    let bytes = bitstream::encode(&outcome.cloud, &outcome.bank, gt.height(), gt.width())?;
    let encode_seconds = start.elapsed().as_secs_f64();

    // the decoder must reproduce the encoder's own fake-quant render
    let decoded = bitstream::decode(&bytes)?;
    let from_stream = render(&decoded.cloud, gt.dims(), cfg.cutoff_sigmas)?;
    let expected = render(&fake_quant_cloud(&outcome.cloud, &outcome.bank)?, gt.dims(), cfg.cutoff_sigmas)?;
    if from_stream.data() != expected.data() {
        return Err(CliError::SelfCheck("decoded stream does not match the encoder's render".into()).into());
    }
    std::fs::write(&a.out, &bytes).with_context(|| format!("writing {}", a.out.display()))?;

    let shown = from_stream.clamped();
    let p = psnr(&shown, &gt)?;
    let s = ms_ssim_or_nan(&shown, &gt)?;
    let bpp = bits_per_pixel(bytes.len(), gt.height(), gt.width());
    let mut outputs = vec![a.out.clone()];
    if let Some(log) = &a.log {
        write_log(log, &outcome.report.history)?;
        outputs.push(log.clone());
    }
    let row = ResultRow {
        image_id: image_id(&a.input),
        max_gaussians: cfg.max_gaussians,
        iterations: cfg.total_iterations,
        variant: cfg.parameterization.name().to_owned(),
        flags: flags_label(cfg.enable_densification, cfg.enable_caf),
        psnr: p,
        ms_ssim: s,
        bpp: Some(bpp),
        encode_s: Some(encode_seconds),
        decode_fps: None,
    };
    if let Some(csv) = &a.csv {
        append_rows(csv, std::slice::from_ref(&row))?;
    }
    let mut m = RunManifest::new("encode", args, a.input.clone(), cfg, workers);
    write_manifest(&mut m, a.manifest.as_deref(), &a.out, outputs)?;
    println!(
        "encode: {} primitives, {} bytes, {bpp:.4} bpp, PSNR {p:.3} dB, MS-SSIM {s:.5}, {encode_seconds:.1} s",
        decoded.cloud.len(),
        bytes.len()
    );
    Ok(Outcome {
        psnr: Some(p),
        ms_ssim: Some(s),
        bpp: Some(bpp),
        encode_seconds: Some(encode_seconds),
        count: Some(decoded.cloud.len()),
        rows: vec![row],
        ..Outcome::default()
    })
}

pub fn cmd_decode(a: &DecodeArgs) -> Result<Outcome> {
    let bytes = std::fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let timing = time_decode(&bytes, a.fps_repeats, a.cutoff)?;
    save_image(&a.out, &timing.image)?;
    println!(
        "decode: {}x{}, {:.1} FPS (median of {})",
        timing.image.width(),
        timing.image.height(),
        timing.fps,
        timing.samples.len()
    );
    Ok(Outcome {
        decode_fps: Some(timing.fps),
        ..Outcome::default()
    })
}

pub fn cmd_eval(a: &EvalArgs) -> Result<Outcome> {
    let gt = load_image(&a.reference)?;
    let ext = a.input.extension().map(|e| e.to_string_lossy().to_lowercase()).unwrap_or_default();
    let mut bpp = None;
    let mut fps = None;
    let mut count = None;
    let image = match ext.as_str() {
        "g2gs" => {
            let bytes = std::fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
            let timing = time_decode(&bytes, a.fps_repeats, a.cutoff)?;
            count = Some(bitstream::decode(&bytes)?.cloud.len());
            bpp = Some(bits_per_pixel(bytes.len(), gt.height(), gt.width()));
            fps = Some(timing.fps);
            timing.image
        }
        "g2cl" => {
            let file = CloudFile::read(&a.input)?;
            count = Some(file.cloud.len());
            render(&file.cloud, (file.height, file.width), a.cutoff)?
        }
        _ => load_image(&a.input)?,
    };
    ensure!(image.dims() == gt.dims(), "input is {:?}, reference is {:?}", image.dims(), gt.dims());
    let shown = image.clamped();
    let p = psnr(&shown, &gt)?;
    let s = ms_ssim_or_nan(&shown, &gt)?;
    print!("eval: PSNR {p:.3} dB, MS-SSIM {s:.5}");
    if let Some(b) = bpp {
        print!(", {b:.4} bpp");
    }
    if let Some(f) = fps {
        print!(", {f:.1} FPS");
    }
    println!();
    let row = ResultRow {
        image_id: image_id(&a.reference),
        max_gaussians: count.unwrap_or(0),
        iterations: 0,
        variant: ext,
        flags: String::new(),
        psnr: p,
        ms_ssim: s,
        bpp,
        encode_s: None,
        decode_fps: fps,
    };
    if let Some(csv) = &a.csv {
        append_rows(csv, std::slice::from_ref(&row))?;
    }
    Ok(Outcome {
        psnr: Some(p),
        ms_ssim: Some(s),
        bpp,
        decode_fps: fps,
        count,
        rows: vec![row],
        ..Outcome::default()
    })
}

pub fn cmd_ablate(a: &AblateArgs, args: Vec<String>, workers: usize) -> Result<Outcome> {
    let arms = Arm::parse_list(&a.arms)?;
    let base = a.train.to_config()?;
    let gt = load_image(&a.input)?;
    let mut rows = Vec::new();
    for &m in &a.budgets {
        for arm in &arms {
            for &seed in &a.seeds {
                let cfg = TrainConfig {
                    max_gaussians: m,
                    parameterization: arm.param,
                    enable_densification: arm.densify,
                    enable_caf: arm.caf,
                    seed,
                    ..base.clone()
                };
                cfg.validate()?;
                let report = fit_with(&gt, &cfg, &mut progress(a.train.verbose))?;
                let rendered = render(&report.cloud, gt.dims(), cfg.cutoff_sigmas)?.clamped();
                let row = ResultRow {
                    image_id: format!("{}#seed{seed}", image_id(&a.input)),
                    max_gaussians: m,
                    iterations: cfg.total_iterations,
                    variant: arm.param.name().to_owned(),
                    flags: flags_label(arm.densify, arm.caf),
                    psnr: psnr(&rendered, &gt)?,
                    ms_ssim: ms_ssim_or_nan(&rendered, &gt)?,
                    bpp: None,
                    encode_s: report.encode_seconds,
                    decode_fps: None,
                };
                println!(
                    "ablate: M={m} {}:{} seed {seed}: PSNR {:.3} dB",
                    row.variant, row.flags, row.psnr
                );
                append_rows(&a.out, std::slice::from_ref(&row))?;
                rows.push(row);
            }
        }
    }
    let mut m = RunManifest::new("ablate", args, a.input.clone(), base, workers);
    write_manifest(&mut m, a.manifest.as_deref(), &a.out, vec![a.out.clone()])?;
    Ok(Outcome {
        rows,
        ..Outcome::default()
    })
}

fn resolved_config(command: &Command) -> Result<Option<TrainConfig>> {
    Ok(match command {
        Command::Fit(a) => Some(a.train.to_config()?),
        Command::Encode(a) => {
            let mut cfg = a.train.to_config()?;
            if let Some(w) = a.warmup {
                cfg.warmup_iterations = w;
            }
            cfg.bit_depths = a.bits.clone().try_into().map_err(|_| anyhow::anyhow!("--bits needs three values"))?;
            cfg.lsq_grad_scale = !a.no_grad_scale;
            Some(cfg)
        }
        Command::Ablate(a) => Some(a.train.to_config()?),
        _ => None,
    })
}

pub fn cmd_replay(a: &ReplayArgs, workers: usize) -> Result<Outcome> {
    let m = RunManifest::read(&a.manifest)?;
    let cli = Cli::try_parse_from(std::iter::once("gsimage".to_owned()).chain(m.args.iter().cloned()))
        .context("manifest arguments no longer parse")?;
    if let Some(cfg) = resolved_config(&cli.command)? {
        if cfg != m.config {
            return Err(CliError::ManifestMismatch.into());
        }
    }
    if matches!(cli.command, Command::Replay(_)) {
        bail!("a manifest cannot replay another replay");
    }
    execute(&cli.command, m.args.clone(), workers)
}

/// Runs one parsed command. `args` are recorded verbatim in manifests.
pub fn execute(command: &Command, args: Vec<String>, workers: usize) -> Result<Outcome> {
    match command {
        Command::Fit(a) => cmd_fit(a, args, workers),
        Command::Encode(a) => cmd_encode(a, args, workers),
        Command::Decode(a) => cmd_decode(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a, args, workers),
        Command::Replay(a) => cmd_replay(a, workers),
    }
}

/// Maps an error to its exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    use gsimage_core::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::BadMagic => exit::BAD_MAGIC,
                E::UnsupportedVersion(_) => exit::UNSUPPORTED_VERSION,
                E::Truncated { .. } => exit::TRUNCATED,
                E::TrailingBytes(_) => exit::TRAILING_BYTES,
                E::Malformed(_) | E::InvalidBitDepth(_) | E::CodeOutOfRange { .. } | E::TooLarge(_) => exit::MALFORMED,
                _ => exit::FAILURE,
            };
        }
        if cause.downcast_ref::<CliError>().is_some() {
            return exit::SELF_CHECK;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() || cause.downcast_ref::<image::ImageError>().is_some() {
            return exit::IO;
        }
    }
    exit::FAILURE
}

/// Parses `argv` (program name first), configures the worker pool and runs.
pub fn main_with_args(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::USAGE } else { exit::OK };
        }
    };
    let workers = cli.workers.unwrap_or_else(rayon::current_num_threads);
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: configuring {n} workers: {e}");
            return exit::USAGE;
        }
    }
    let args = argv.into_iter().skip(1).collect();
    match execute(&cli.command, args, workers) {
        Ok(_) => exit::OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
