//! Batch runner: simulate measurements, reconstruct, score, write a CSV.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;
use thiserror::Error;

use crate::denoise::DenoiserKind;
use crate::image::{load_image, psnr, save_image, Image, ImageError};
use crate::presets::{self, PresetError};
use crate::sensing::{BlockSensor, Measurements, SensingError};
use crate::solver::{reconstruct, Reconstruction, SolverConfig, SolverError};
use crate::timing::Stopwatch;

/// Column layout of the summary CSV. Bump [`CSV_SCHEMA_VERSION`] on change.
pub const CSV_COLUMNS: &[&str] = &[
    "image",
    "ratio",
    "seed",
    "preset",
    "psnr_init",
    "psnr_final",
    "iterations",
    "wall_seconds",
    "crop_top",
    "crop_left",
];
pub const CSV_SCHEMA_VERSION: u32 = 1;
pub const SUMMARY_FILE: &str = "summary.csv";
pub const DEFAULT_BLOCK_SIZE: usize = 32;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("no input images given")]
    NoInputs,
    #[error("ratio {0} outside (0, 1]")]
    BadRatio(f64),
    #[error("no ratios given")]
    NoRatios,
    #[error("seed mismatch: requested {requested}, file header has {found}")]
    SeedMismatch { requested: u64, found: u64 },
    #[error("{path}: {source}")]
    Input { path: PathBuf, source: ImageError },
    #[error(transparent)]
    Preset(#[from] PresetError),
    #[error(transparent)]
    Sensing(#[from] SensingError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    /// Image files or directories of images (`.pgm`, `.png`).
    pub inputs: Vec<PathBuf>,
    pub ratios: Vec<f64>,
    pub seed: u64,
    /// Preset name or TOML path; `None` picks `r0.x` per ratio.
    pub preset: Option<String>,
    /// `key = value` overrides applied after the preset.
    pub overrides: Vec<String>,
    pub out_dir: PathBuf,
    /// Replaces the preset's denoiser when set.
    pub denoiser: Option<DenoiserKind>,
    /// Write a JSON-lines iteration history per run.
    pub history: bool,
    pub block_size: usize,
}

impl ExperimentSpec {
    pub fn new(inputs: Vec<PathBuf>, ratios: Vec<f64>, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            inputs,
            ratios,
            seed: 7,
            preset: None,
            overrides: Vec::new(),
            out_dir: out_dir.into(),
            denoiser: None,
            history: false,
            block_size: DEFAULT_BLOCK_SIZE,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.inputs.is_empty() {
            return Err(ExperimentError::NoInputs);
        }
        if self.ratios.is_empty() {
            return Err(ExperimentError::NoRatios);
        }
        if let Some(&r) = self.ratios.iter().find(|&&r| !(r > 0.0 && r <= 1.0)) {
            return Err(ExperimentError::BadRatio(r));
        }
        Ok(())
    }

    /// Preset name used for a ratio.
    pub fn preset_for(&self, ratio: f64) -> String {
        self.preset.clone().unwrap_or_else(|| presets::for_ratio(ratio))
    }

    /// Resolved solver configuration for a ratio.
    pub fn config_for(&self, ratio: f64) -> Result<SolverConfig, ExperimentError> {
        let mut cfg = presets::resolve(&self.preset_for(ratio), &self.overrides)?;
        if let Some(kind) = &self.denoiser {
            cfg.denoiser = kind.clone();
        }
        Ok(cfg)
    }
}

/// One CSV data row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRow {
    pub image: String,
    pub ratio: Option<f64>,
    pub seed: Option<u64>,
    pub preset: String,
    pub psnr_init: f64,
    pub psnr_final: f64,
    pub iterations: f64,
    pub wall_seconds: f64,
    pub crop_top: Option<usize>,
    pub crop_left: Option<usize>,
}

#[derive(Debug)]
pub struct RunFailure {
    pub input: String,
    pub ratio: Option<f64>,
    pub error: ExperimentError,
}

#[derive(Debug, Default)]
pub struct Summary {
    pub rows: Vec<RunRow>,
    pub average: Option<RunRow>,
    pub failures: Vec<RunFailure>,
    pub csv_path: Option<PathBuf>,
}

impl Summary {
    /// True when every requested run produced a row.
    pub fn complete(&self) -> bool {
        self.failures.is_empty() && !self.rows.is_empty()
    }
}

fn is_image_path(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("pgm" | "png")
    )
}

/// Expand directories (non-recursive, sorted) into image files.
pub fn collect_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, ExperimentError> {
    let mut out = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(input)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && is_image_path(p))
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(input.clone());
        }
    }
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into())
}

/// Load and center-crop to the block grid.
pub fn prepare_image(path: &Path, block_size: usize) -> Result<(Image, (usize, usize)), ExperimentError> {
    let wrap = |source| ExperimentError::Input {
        path: path.to_owned(),
        source,
    };
    let img = load_image(path).map_err(wrap)?;
    img.center_crop_to_multiple(block_size).map_err(wrap)
}

/// Result of one (image, ratio) run.
#[derive(Debug)]
pub struct RunOutput {
    pub row: RunRow,
    pub reconstruction: Reconstruction,
}

/// Measure, reconstruct and score one prepared image.
pub fn run_single(
    name: &str,
    img: &Image,
    crop: (usize, usize),
    ratio: f64,
    spec: &ExperimentSpec,
) -> Result<RunOutput, ExperimentError> {
    let cfg = spec.config_for(ratio)?;
    let watch = Stopwatch::start();
    let sensor = BlockSensor::new(spec.block_size, ratio, spec.seed)?;
    let meas = sensor.measure_with(img, cfg.parallel)?;
    let rec = reconstruct(&sensor, &meas, &cfg, None)?;
    let wall_seconds = watch.elapsed_secs();
    let row = RunRow {
        image: name.to_owned(),
        ratio: Some(ratio),
        seed: Some(spec.seed),
        preset: spec.preset_for(ratio),
        psnr_init: psnr(img, &rec.initial)?,
        psnr_final: psnr(img, &rec.image)?,
        iterations: rec.iterations() as f64,
        wall_seconds,
        crop_top: Some(crop.0),
        crop_left: Some(crop.1),
    };
    Ok(RunOutput {
        row,
        reconstruction: rec,
    })
}

fn run_label(name: &str, ratio: f64) -> String {
    format!("{name}_r{ratio:.2}")
}

fn average_row(rows: &[RunRow]) -> Option<RunRow> {
    if rows.is_empty() {
        return None;
    }
    let n = rows.len() as f64;
    let mean = |f: fn(&RunRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let presets: Vec<&str> = rows.iter().map(|r| r.preset.as_str()).collect();
    let preset = if presets.windows(2).all(|w| w[0] == w[1]) {
        presets[0].to_owned()
    } else {
        "mixed".into()
    };
    Some(RunRow {
        image: "average".into(),
        ratio: None,
        seed: None,
        preset,
        psnr_init: mean(|r| r.psnr_init),
        psnr_final: mean(|r| r.psnr_final),
        iterations: mean(|r| r.iterations),
        wall_seconds: mean(|r| r.wall_seconds),
        crop_top: None,
        crop_left: None,
    })
}

/// Write rows plus the optional average row as CSV.
pub fn write_csv(w: impl Write, rows: &[RunRow], average: Option<&RunRow>) -> Result<(), ExperimentError> {
    let mut writer = csv::Writer::from_writer(w);
    for row in rows.iter().chain(average) {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Run every (image, ratio) pair, writing images, histories and the CSV
/// under `spec.out_dir`. Per-run failures are collected, not fatal.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Summary, ExperimentError> {
    spec.validate()?;
    std::fs::create_dir_all(&spec.out_dir)?;
    let inputs = collect_inputs(&spec.inputs)?;
    let mut summary = Summary::default();
    for path in &inputs {
        let name = stem(path);
        let (img, crop) = match prepare_image(path, spec.block_size) {
            Ok(v) => v,
            Err(error) => {
                warn!("skipping {}: {error}", path.display());
                summary.failures.push(RunFailure {
                    input: path.display().to_string(),
                    ratio: None,
                    error,
                });
                continue;
            }
        };
        for &ratio in &spec.ratios {
            let label = run_label(&name, ratio);
            let outcome = run_single(&name, &img, crop, ratio, spec).and_then(|out| {
                save_image(&out.reconstruction.image, spec.out_dir.join(format!("{label}.png")))?;
                if spec.history {
                    let file = File::create(spec.out_dir.join(format!("{label}.history.jsonl")))?;
                    out.reconstruction.write_history(BufWriter::new(file))?;
                }
                Ok(out.row)
            });
            match outcome {
                Ok(row) => {
                    info!(
                        "{label}: {:.2} -> {:.2} dB in {} iterations",
                        row.psnr_init, row.psnr_final, row.iterations
                    );
                    summary.rows.push(row);
                }
                Err(error) => {
                    warn!("{label} failed: {error}");
                    summary.failures.push(RunFailure {
                        input: path.display().to_string(),
                        ratio: Some(ratio),
                        error,
                    });
                }
            }
        }
    }
    summary.average = average_row(&summary.rows);
    if !summary.rows.is_empty() {
        let path = spec.out_dir.join(SUMMARY_FILE);
        write_csv(BufWriter::new(File::create(&path)?), &summary.rows, summary.average.as_ref())?;
        summary.csv_path = Some(path);
    }
    Ok(summary)
}

/// Measure an image file and write the measurement binary.
/// Returns the crop offset applied before measuring.
pub fn encode_file(
    image: &Path,
    ratio: f64,
    seed: u64,
    block_size: usize,
    out: &Path,
) -> Result<(usize, usize), ExperimentError> {
    let (img, crop) = prepare_image(image, block_size)?;
    let sensor = BlockSensor::new(block_size, ratio, seed)?;
    let meas = sensor.measure(&img)?;
    let mut w = BufWriter::new(File::create(out)?);
    meas.write_to(&mut w)?;
    w.flush()?;
    Ok(crop)
}

/// Read a measurement file and rebuild its sensor. When `expected_seed` is
/// given it must match the header.
pub fn load_measurements(
    path: &Path,
    expected_seed: Option<u64>,
) -> Result<(BlockSensor, Measurements), ExperimentError> {
    let meas = Measurements::from_bytes(&std::fs::read(path)?)?;
    if let Some(requested) = expected_seed {
        if requested != meas.seed() {
            return Err(ExperimentError::SeedMismatch {
                requested,
                found: meas.seed(),
            });
        }
    }
    let sensor = BlockSensor::with_rows(meas.block_size(), meas.rows(), meas.seed())?;
    Ok((sensor, meas))
}

/// Reconstruct from a measurement file. The preset defaults to the one for
/// the file's sampling ratio.
pub fn decode_file(
    path: &Path,
    expected_seed: Option<u64>,
    preset: Option<&str>,
    overrides: &[String],
    denoiser: Option<DenoiserKind>,
) -> Result<Reconstruction, ExperimentError> {
    let (sensor, meas) = load_measurements(path, expected_seed)?;
    let name = preset.map(str::to_owned).unwrap_or_else(|| presets::for_ratio(sensor.ratio()));
    let mut cfg = presets::resolve(&name, overrides)?;
    if let Some(kind) = denoiser {
        cfg.denoiser = kind;
    }
    Ok(reconstruct(&sensor, &meas, &cfg, None)?)
}
