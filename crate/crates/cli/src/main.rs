//! `segres`: degrade images, segment them with joint restoration, score
//! the result, and run experiment matrices.

mod commands;
mod config;
mod experiment;
mod imageio;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use segres_core::corrupt::{BlurSpec, DegradeSpec, SceneKind};

use crate::config::{CorruptSidecar, ExperimentFile, ModelConfig, SegmentFile};

#[derive(Parser)]
#[command(name = "segres", version, about = "Joint image restoration and multiphase segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Blur, add noise and drop pixels; writes the image, its mask and a spec sidecar.
    Corrupt(CorruptArgs),
    /// Segment an image, restoring it through the given blur and mask.
    Segment(SegmentArgs),
    /// Segmentation accuracy of a label map against ground truth.
    Evaluate(EvaluateArgs),
    /// Run a scenes × degradations × parameters matrix from a TOML file.
    Experiment(ExperimentArgs),
    /// Write a synthetic scene and its ground-truth labels.
    Scene(SceneArgs),
}

#[derive(Args)]
struct CorruptArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Mask output path (default: <output stem>_mask.<ext>).
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Gaussian noise variance.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// none | gaussian:SIZE:STD | motion:LEN:ANGLE
    #[arg(long, default_value = "none")]
    blur: BlurSpec,
    /// Fraction of pixels to drop.
    #[arg(long, default_value_t = 0.0)]
    drop: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Replay the degradation recorded in a sidecar; other degradation flags are ignored.
    #[arg(long)]
    spec: Option<PathBuf>,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    input: PathBuf,
    /// Observation mask, 0 = missing and 255 = observed (default: all observed).
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    output: PathBuf,
    /// TOML file with a [model] table; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Args)]
struct ModelFlags {
    /// Number of phases K [default: 2]
    #[arg(long)]
    phases: Option<usize>,
    /// Restoration weight [default: 1]
    #[arg(long)]
    mu: Option<f64>,
    /// Segmentation weight [default: 10]
    #[arg(long)]
    lambda: Option<f64>,
    /// ADMM penalty [default: 2]
    #[arg(long)]
    sigma: Option<f64>,
    /// Stop when the codebook moves less than this [default: 1e-4]
    #[arg(long)]
    epsilon: Option<f64>,
    /// Outer iteration limit [default: 200]
    #[arg(long)]
    max_outer: Option<usize>,
    /// ADMM iteration limit per outer step [default: 100]
    #[arg(long)]
    max_inner: Option<usize>,
    /// ADMM stopping tolerance [default: 1e-3]
    #[arg(long)]
    inner_tol: Option<f64>,
    /// Skip restoration and segment the observation directly.
    #[arg(long)]
    baseline: bool,
    /// Recorded in the manifest; the solver itself is deterministic.
    #[arg(long)]
    seed: Option<u64>,
    /// Blur operator A: none | gaussian:SIZE:STD | motion:LEN:ANGLE
    #[arg(long)]
    blur: Option<BlurSpec>,
}

impl ModelFlags {
    fn to_config(&self) -> ModelConfig {
        ModelConfig {
            phases: self.phases,
            mu: self.mu,
            lambda: self.lambda,
            sigma: self.sigma,
            epsilon: self.epsilon,
            max_outer: self.max_outer,
            max_inner: self.max_inner,
            inner_tol: self.inner_tol,
            baseline: self.baseline.then_some(true),
            seed: self.seed,
            blur: self.blur.map(|b| b.to_string()),
            ..ModelConfig::default()
        }
    }
}

#[derive(Args)]
struct EvaluateArgs {
    /// Predicted label map.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth label map.
    #[arg(long)]
    truth: PathBuf,
    /// JSON report path.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory for results.csv, timings.csv and per-cell files.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct SceneArgs {
    /// shapes2 | barcode | shapes4 | stars5 | rgbK (K in 2..=8)
    #[arg(long)]
    kind: SceneKind,
    #[arg(long, default_value_t = 128)]
    size: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
    /// Ground-truth label map path.
    #[arg(long)]
    truth: Option<PathBuf>,
}

/// Applies `SEGRES_THREADS` to the global thread pool.
fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("SEGRES_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().with_context(|| format!("SEGRES_THREADS must be a positive integer, got '{v}'"))?;
    if n == 0 {
        bail!("SEGRES_THREADS must be a positive integer, got 0");
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Corrupt(a) => {
            let spec = match &a.spec {
                Some(path) => config::load::<CorruptSidecar>(path)?.degrade,
                None => DegradeSpec { noise_variance: a.noise, blur: a.blur, drop_fraction: a.drop, seed: a.seed },
            };
            commands::corrupt(&commands::CorruptJob { input: a.input, output: a.output, mask: a.mask, spec })
        }
        Command::Segment(a) => {
            let file = match &a.config {
                Some(path) => config::load::<SegmentFile>(path)?,
                None => SegmentFile::default(),
            };
            let model = file.model.merged(&a.model.to_config());
            let m = commands::segment(&a.input, a.mask.as_deref(), &model, &a.output)?;
            log::info!("{:?} after {} iterations, outputs in {}", m.termination, m.iterations, a.output.display());
            Ok(())
        }
        Command::Evaluate(a) => {
            let rep = commands::evaluate(&a.pred, &a.truth, a.output.as_deref())?;
            println!("SA {:.2}", rep.sa);
            Ok(())
        }
        Command::Experiment(a) => {
            let cfg: ExperimentFile = config::load(&a.config)?;
            let rows = experiment::experiment(&cfg, &a.output)?;
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            if failed > 0 {
                bail!("{failed} of {} cells failed, see {}", rows.len(), a.output.join("results.csv").display());
            }
            Ok(())
        }
        Command::Scene(a) => commands::scene(a.kind, a.size, a.seed, &a.output, a.truth.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match configure_threads().and_then(|()| dispatch(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
