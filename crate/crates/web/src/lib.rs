//! Browser demo bindings. The [`demo`] module holds the plain Rust logic so
//! it can be tested natively; the `#[wasm_bindgen]` layer only converts
//! errors for JavaScript.

pub mod demo;

use wasm_bindgen::prelude::*;

use demo::DemoSession;

/// One grayscale image plus its simulated measurements.
#[wasm_bindgen]
pub struct Session(DemoSession);

fn js(e: demo::DemoError) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
impl Session {
    /// `gray` is row-major 8-bit luminance. The image is center-cropped to
    /// the 32-pixel block grid.
    #[wasm_bindgen(constructor)]
    pub fn new(gray: &[u8], width: usize, height: usize) -> Result<Session, JsError> {
        DemoSession::new(gray, width, height).map(Session).map_err(js)
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    /// Cropped original as 8-bit gray.
    pub fn original(&self) -> Vec<u8> {
        self.0.original()
    }

    /// Simulate block CS at `ratio` and return the initial estimate.
    pub fn measure(&mut self, ratio: f64, seed: u32) -> Result<Vec<u8>, JsError> {
        self.0.measure(ratio, u64::from(seed)).map_err(js)
    }

    /// Reconstruct from the last measurements with a named preset.
    pub fn reconstruct(&mut self, preset: &str, max_iters: usize) -> Result<Vec<u8>, JsError> {
        self.0.reconstruct(preset, max_iters).map_err(js)
    }

    /// Add Gaussian noise of `sigma`, then run the native DCT denoiser.
    /// Returns the noisy image followed by the denoised one; the PSNR
    /// reported afterwards is the denoised one.
    pub fn denoise(&mut self, sigma: f64, seed: u32) -> Result<Vec<u8>, JsError> {
        self.0.noisy_and_denoised(sigma, u64::from(seed)).map_err(js)
    }

    /// PSNR of the last result against the cropped original.
    pub fn last_psnr(&self) -> f64 {
        self.0.last_psnr()
    }

    /// Iterations used by the last reconstruction.
    pub fn last_iterations(&self) -> usize {
        self.0.last_iterations()
    }
}

/// Preset names available to [`Session::reconstruct`].
#[wasm_bindgen]
pub fn preset_names() -> Vec<String> {
    hpnp::presets::names().into_iter().map(str::to_owned).collect()
}
