use hpnp::image::quantize;
use hpnp::sensing::SensingError;
use hpnp::solver::SolverError;
use hpnp::{presets, psnr, reconstruct, BlockSensor, Image, ImageError, Measurements};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use thiserror::Error;

pub const BLOCK: usize = 32;

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("image must be at least {BLOCK}x{BLOCK} pixels, got {0}x{1}")]
    TooSmall(usize, usize),
    #[error("measure the image first")]
    NotMeasured,
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Sensing(#[from] SensingError),
    #[error(transparent)]
    Preset(#[from] presets::PresetError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Denoise(#[from] hpnp::DenoiseError),
}

pub struct DemoSession {
    original: Image,
    measured: Option<(BlockSensor, Measurements)>,
    last_psnr: f64,
    last_iterations: usize,
}

impl DemoSession {
    pub fn new(gray: &[u8], width: usize, height: usize) -> Result<Self, DemoError> {
        if width < BLOCK || height < BLOCK {
            return Err(DemoError::TooSmall(width, height));
        }
        let img = Image::new(height, width, gray.iter().map(|&v| f64::from(v)).collect())?;
        let (original, _) = img.center_crop_to_multiple(BLOCK)?;
        Ok(Self {
            original,
            measured: None,
            last_psnr: f64::NAN,
            last_iterations: 0,
        })
    }

    pub fn width(&self) -> usize {
        self.original.width()
    }

    pub fn height(&self) -> usize {
        self.original.height()
    }

    pub fn original(&self) -> Vec<u8> {
        quantize(&self.original)
    }

    fn finish(&mut self, img: &Image) -> Result<Vec<u8>, DemoError> {
        self.last_psnr = psnr(&self.original, img)?;
        Ok(quantize(img))
    }

    pub fn measure(&mut self, ratio: f64, seed: u64) -> Result<Vec<u8>, DemoError> {
        let sensor = BlockSensor::new(BLOCK, ratio, seed)?;
        let meas = sensor.measure_with(&self.original, false)?;
        let cfg = presets::load(&presets::for_ratio(ratio))?;
        let init = sensor.initial_estimate(&meas, cfg.init_smoothing_iters)?;
        self.measured = Some((sensor, meas));
        self.last_iterations = 0;
        self.finish(&init)
    }

    pub fn reconstruct(&mut self, preset: &str, max_iters: usize) -> Result<Vec<u8>, DemoError> {
        let (sensor, meas) = self.measured.as_ref().ok_or(DemoError::NotMeasured)?;
        let name = if preset.is_empty() {
            presets::for_ratio(sensor.ratio())
        } else {
            preset.to_owned()
        };
        let mut cfg = presets::load(&name)?;
        cfg.max_iters = max_iters.max(1);
        cfg.parallel = false;
        let rec = reconstruct(sensor, meas, &cfg, None)?;
        self.last_iterations = rec.iterations();
        self.finish(&rec.image)
    }

    pub fn noisy_and_denoised(&mut self, sigma: f64, seed: u64) -> Result<Vec<u8>, DemoError> {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let noisy = self.original.map(|v| {
            let n: f64 = rng.sample(StandardNormal);
            v + sigma * n
        });
        let clean = hpnp::denoise::native_dct_denoise(&noisy, sigma);
        let mut out = quantize(&noisy);
        out.extend(self.finish(&clean)?);
        Ok(out)
    }

    pub fn last_psnr(&self) -> f64 {
        self.last_psnr
    }

    pub fn last_iterations(&self) -> usize {
        self.last_iterations
    }
}
