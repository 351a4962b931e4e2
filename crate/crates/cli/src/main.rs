//! `hpnp`: simulate block CS measurements, reconstruct, score.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hpnp::experiment::{self, ExperimentError, ExperimentSpec, DEFAULT_BLOCK_SIZE};
use hpnp::{load_image, psnr, save_image, DenoiserKind, ImageError};
use log::error;
use thiserror::Error;

#[derive(Debug, Error)]
enum CliError {
    #[error("bad --denoiser {0:?}: expected `native` or `external:CMD`")]
    Denoiser(String),
    #[error("bad --set {0:?}: expected key=value")]
    Override(String),
    #[error("HPNP_THREADS={0:?} is not a positive integer")]
    Threads(String),
    #[error("thread pool: {0}")]
    Pool(String),
    #[error("{failed} of {total} runs failed")]
    RunsFailed { failed: usize, total: usize },
    #[error("no results")]
    NoResults,
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Parser)]
#[command(name = "hpnp", version, about = "Hybrid plug-and-play compressive sensing reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Measure, reconstruct and score images at several sampling ratios.
    Run(RunArgs),
    /// Measure one image and write the measurement file.
    Encode(EncodeArgs),
    /// Reconstruct from a measurement file.
    Decode(DecodeArgs),
    /// PSNR between two images.
    Psnr { a: PathBuf, b: PathBuf },
}

#[derive(Args)]
struct SolverArgs {
    /// Preset name or TOML file. Defaults to r0.x for each ratio.
    #[arg(long)]
    preset: Option<String>,
    /// Config override, e.g. `--set max_iters=20` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// `native` or `external:"CMD ARGS"`.
    #[arg(long)]
    denoiser: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    /// Image files or directories (comma-separated or repeated).
    #[arg(long, required = true, value_delimiter = ',')]
    images: Vec<PathBuf>,
    #[arg(long, required = true, value_delimiter = ',')]
    ratios: Vec<f64>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Write per-run JSON-lines iteration histories.
    #[arg(long)]
    history: bool,
    #[arg(long, default_value_t = DEFAULT_BLOCK_SIZE)]
    block_size: usize,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct EncodeArgs {
    image: PathBuf,
    #[arg(long)]
    ratio: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_BLOCK_SIZE)]
    block_size: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DecodeArgs {
    measurements: PathBuf,
    /// Expected seed; must match the file header.
    #[arg(long)]
    seed: Option<u64>,
    /// Output image (.png or .pgm).
    #[arg(long)]
    out: PathBuf,
    /// Also write the iteration history here.
    #[arg(long)]
    history: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

fn parse_denoiser(text: &str) -> Result<DenoiserKind, CliError> {
    match text {
        "native" => Ok(DenoiserKind::NativeDct),
        _ => match text.strip_prefix("external:") {
            Some(cmd) if !cmd.trim().is_empty() => Ok(DenoiserKind::external(cmd)),
            _ => Err(CliError::Denoiser(text.to_owned())),
        },
    }
}

fn toml_overrides(raw: &[String]) -> Result<Vec<String>, CliError> {
    raw.iter()
        .map(|kv| match kv.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() => Ok(format!("{} = {}", k.trim(), v.trim())),
            _ => Err(CliError::Override(kv.clone())),
        })
        .collect()
}

impl SolverArgs {
    fn denoiser(&self) -> Result<Option<DenoiserKind>, CliError> {
        self.denoiser.as_deref().map(parse_denoiser).transpose()
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("HPNP_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Threads(raw.clone()))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Pool(e.to_string()))
}

fn run(args: RunArgs) -> Result<(), CliError> {
    let mut spec = ExperimentSpec::new(args.images, args.ratios, args.out);
    spec.seed = args.seed;
    spec.preset = args.solver.preset.clone();
    spec.overrides = toml_overrides(&args.solver.overrides)?;
    spec.denoiser = args.solver.denoiser()?;
    spec.history = args.history;
    spec.block_size = args.block_size;
    let summary = experiment::run_experiment(&spec)?;
    for row in summary.rows.iter().chain(&summary.average) {
        println!(
            "{:<16} {:>5} {:>8.2} -> {:>6.2} dB  {:>3} it  {:>7.1}s",
            row.image,
            row.ratio.map(|r| format!("{r:.2}")).unwrap_or_default(),
            row.psnr_init,
            row.psnr_final,
            row.iterations,
            row.wall_seconds
        );
    }
    if let Some(path) = &summary.csv_path {
        println!("summary: {}", path.display());
    }
    for failure in &summary.failures {
        error!("{} (ratio {:?}): {}", failure.input, failure.ratio, failure.error);
    }
    if summary.rows.is_empty() {
        return Err(CliError::NoResults);
    }
    if !summary.failures.is_empty() {
        return Err(CliError::RunsFailed {
            failed: summary.failures.len(),
            total: summary.failures.len() + summary.rows.len(),
        });
    }
    Ok(())
}

fn encode(args: EncodeArgs) -> Result<(), CliError> {
    let (top, left) = experiment::encode_file(&args.image, args.ratio, args.seed, args.block_size, &args.out)?;
    println!("wrote {} (crop offset {top},{left})", args.out.display());
    Ok(())
}

fn decode(args: DecodeArgs) -> Result<(), CliError> {
    let overrides = toml_overrides(&args.solver.overrides)?;
    let rec = experiment::decode_file(
        &args.measurements,
        args.seed,
        args.solver.preset.as_deref(),
        &overrides,
        args.solver.denoiser()?,
    )?;
    save_image(&rec.image, &args.out)?;
    if let Some(path) = &args.history {
        rec.write_history(BufWriter::new(File::create(path)?))
            .map_err(ExperimentError::from)?;
    }
    println!("wrote {} after {} iterations", args.out.display(), rec.iterations());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Run(args) => run(args),
        Command::Encode(args) => encode(args),
        Command::Decode(args) => decode(args),
        Command::Psnr { a, b } => {
            let value = psnr(&load_image(&a)?, &load_image(&b)?)?;
            println!("{value:.4}");
            Ok(())
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
