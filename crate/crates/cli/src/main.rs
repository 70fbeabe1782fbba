use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use tryon_core::backend::{BackendSpec, Denoiser, ToyModelSpec};
use tryon_core::harness::{
    default_undergarment, load_manifest, run_ablation, run_eval, EvalMode, EvalOptions, Generator,
};
use tryon_core::image_io::{load_image, load_mask, save_image};
use tryon_core::metrics::SsimParams;
use tryon_core::refiner::{make_highpass_mask, refine, DEFAULT_CUTOFF};
use tryon_core::schedule::NoiseSchedule;
use tryon_core::{Error, PipelineConfig, TryOnJob};

/// Bad arguments or input documents; exits with status 1.
#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(e: impl fmt::Display) -> anyhow::Error {
    Usage(e.to_string()).into()
}

#[derive(Parser)]
#[command(name = "tryon", version, about = "Two-stage diffusion virtual try-on")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single try-on job.
    Run(RunArgs),
    /// Evaluate a manifest in paired or unpaired mode.
    Eval(EvalArgs),
    /// Run the five-row ablation matrix over a manifest.
    Ablate(AblateArgs),
    /// Restore high-frequency detail from a source image into a generated one.
    Refine(RefineArgs),
    /// Write a noise schedule as JSON.
    ScheduleDump(ScheduleDumpArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum CfgMode {
    Static,
    Dynamic,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Paired,
    Unpaired,
}

impl From<ModeArg> for EvalMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Paired => EvalMode::Paired,
            ModeArg::Unpaired => EvalMode::Unpaired,
        }
    }
}

#[derive(Args)]
struct PipelineArgs {
    /// Skip the undress stage and sample once with the target garment.
    #[arg(long)]
    no_ur: bool,
    /// Use a constant guidance scale.
    #[arg(long)]
    no_dcfg: bool,
    /// Skip structural refinement.
    #[arg(long)]
    no_sr: bool,
    #[arg(long, value_enum, default_value = "dynamic")]
    cfg: CfgMode,
    #[arg(long, default_value_t = 2.5)]
    omega: f64,
    #[arg(long, default_value_t = 30)]
    steps: usize,
    #[arg(long, default_value_t = 1.0)]
    stage2_strength: f64,
    #[arg(long, default_value_t = DEFAULT_CUTOFF)]
    sr_cutoff: f64,
    /// `toy` or `remote:<host:port>`.
    #[arg(long, env = "TRYON_BACKEND", default_value = "toy")]
    backend: String,
    /// Spread of the toy model's Gaussian target (0 = point mass).
    #[arg(long, default_value_t = 0.0)]
    toy_spread: f64,
}

impl PipelineArgs {
    fn config(&self) -> Result<PipelineConfig> {
        let schedule = NoiseSchedule::default_linear(self.steps).map_err(usage)?;
        let cfg = PipelineConfig {
            schedule,
            omega: self.omega,
            stage2_strength: self.stage2_strength,
            enable_ur: !self.no_ur,
            enable_dcfg: !self.no_dcfg && matches!(self.cfg, CfgMode::Dynamic),
            enable_sr: !self.no_sr,
            sr_cutoff: self.sr_cutoff,
        };
        cfg.validate().map_err(usage)?;
        Ok(cfg)
    }

    fn toy_spec(&self) -> Result<ToyModelSpec> {
        let spec = ToyModelSpec::default().with_spread(self.toy_spread);
        spec.validate().map_err(usage)?;
        Ok(spec)
    }

    fn denoiser(&self) -> Result<Box<dyn Denoiser>> {
        let spec = BackendSpec::from_str(&self.backend).map_err(usage)?;
        Ok(spec.build(self.toy_spec()?)?)
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    person: PathBuf,
    /// Undergarment reference; a flat grey raster when omitted.
    #[arg(long)]
    undergarment: Option<PathBuf>,
    #[arg(long)]
    garment: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    densepose: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args)]
struct HarnessArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value = "paired")]
    mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Records processed concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value_t = 0)]
    extractor_seed: u64,
    #[arg(long, default_value_t = 64)]
    extractor_dim: usize,
    /// Copy ground truth instead of sampling (harness self-test).
    #[arg(long)]
    identity: bool,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

impl HarnessArgs {
    fn options(&self, outdir: PathBuf) -> Result<EvalOptions> {
        if self.jobs == 0 {
            return Err(usage("--jobs must be at least 1"));
        }
        Ok(EvalOptions {
            mode: self.mode.into(),
            seed: self.seed,
            jobs: self.jobs,
            outdir,
            extractor_seed: self.extractor_seed,
            extractor_dim: self.extractor_dim,
            ssim: SsimParams::default(),
        })
    }

    fn records(&self) -> Result<Vec<tryon_core::harness::TripletRecord>> {
        load_manifest(&self.manifest).map_err(|e| match e {
            Error::Io { .. } => anyhow::Error::new(e),
            other => usage(format!("{}: {other}", self.manifest.display())),
        })
    }
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    harness: HarnessArgs,
    /// Report destination.
    #[arg(long)]
    out: PathBuf,
    /// Directory for generated images.
    #[arg(long, default_value = "gen")]
    outdir: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    harness: HarnessArgs,
    /// Directory receiving one report per configuration.
    #[arg(long)]
    out: PathBuf,
    /// Directory for generated images; defaults to `<out>/images`.
    #[arg(long)]
    outdir: Option<PathBuf>,
}

#[derive(Args)]
struct RefineArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    generated: PathBuf,
    #[arg(long, default_value_t = DEFAULT_CUTOFF)]
    cutoff: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScheduleDumpArgs {
    #[arg(long, default_value_t = 30)]
    steps: usize,
    #[arg(long, default_value_t = 1e-4)]
    beta_min: f64,
    #[arg(long, default_value_t = 0.02)]
    beta_max: f64,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let config = args.pipeline.config()?;
    let backend = args.pipeline.denoiser()?;
    let person = load_image(&args.person)?;
    let undergarment_ref = match &args.undergarment {
        Some(p) => load_image(p)?,
        None => default_undergarment(&person),
    };
    let job = TryOnJob {
        undergarment_ref,
        target_garment_ref: load_image(&args.garment)?,
        mask: load_mask(&args.mask)?,
        densepose: load_image(&args.densepose)?,
        person,
        seed: args.seed,
        config,
    };
    let image = tryon_core::undress_redress(&job, backend.as_ref())?;
    save_image(&image, &args.out)?;
    Ok(())
}

fn with_generator<T>(h: &HarnessArgs, f: impl FnOnce(Generator<'_>) -> Result<T>) -> Result<T> {
    if h.identity {
        return f(Generator::Identity);
    }
    let backend = h.pipeline.denoiser()?;
    f(Generator::Pipeline(backend.as_ref()))
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let h = &args.harness;
    let config = h.pipeline.config()?;
    let records = h.records()?;
    let opts = h.options(args.outdir.clone())?;
    let report = with_generator(h, |g| Ok(run_eval(&records, &config, g, &opts)?))?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    report.write_atomic(&args.out)?;
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let h = &args.harness;
    let config = h.pipeline.config()?;
    let records = h.records()?;
    let outdir = args
        .outdir
        .clone()
        .unwrap_or_else(|| args.out.join("images"));
    let opts = h.options(outdir)?;
    let reports = with_generator(h, |g| Ok(run_ablation(&records, &config, g, &opts)?))?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    for (row, report) in tryon_core::harness::ablation_rows().iter().zip(&reports) {
        report.write_atomic(args.out.join(format!("{}.json", row.slug)))?;
    }
    for report in &reports {
        let a = &report.aggregate;
        println!(
            "{:<10} ssim={} fid={} kid={}",
            report.label.as_deref().unwrap_or(""),
            fmt_opt(a.ssim_mean),
            fmt_opt(a.fid),
            fmt_opt(a.kid)
        );
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.6}"))
}

fn cmd_refine(args: RefineArgs) -> Result<()> {
    let source = load_image(&args.source)?;
    let generated = load_image(&args.generated)?;
    let band =
        make_highpass_mask(generated.height(), generated.width(), args.cutoff).map_err(usage)?;
    save_image(&refine(&source, &generated, &band)?, &args.out)?;
    Ok(())
}

fn cmd_schedule_dump(args: ScheduleDumpArgs) -> Result<()> {
    let sched = NoiseSchedule::linear(args.steps, args.beta_min, args.beta_max).map_err(usage)?;
    let json = sched.to_json();
    match &args.out {
        Some(path) => write_file(path, &json),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, format!("{text}\n")).with_context(|| format!("writing {}", path.display()))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Usage>().is_some() {
        return 1;
    }
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_usage() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Refine(a) => cmd_refine(a),
        Command::ScheduleDump(a) => cmd_schedule_dump(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
