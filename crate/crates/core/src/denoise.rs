//! Plug-in Gaussian denoisers: a native sliding-DCT hard-thresholding
//! denoiser and a bridge to an external denoiser process speaking a framed
//! binary protocol over stdin/stdout.
//!
//! Wire protocol v1 (little-endian):
//!
//! ```text
//! request:  "HPNPDNZ1" | u32 width | u32 height | f32 sigma | width*height f32 pixels
//! response: "HPNPDNR1" | u32 width | u32 height | width*height f32 pixels
//! ```
//!
//! Pixels are row-major on the [0, 255] scale. The child answers each request
//! with exactly one response, flushes, and exits on end of input.

use std::io::{self, BufReader, Read, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{Image, ImageError};
use crate::patches::reference_positions;

pub const REQUEST_MAGIC: &[u8; 8] = b"HPNPDNZ1";
pub const RESPONSE_MAGIC: &[u8; 8] = b"HPNPDNR1";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

/// Threshold multiplier applied to sigma for the DCT coefficients.
pub const DCT_THRESHOLD: f64 = 2.7;
const DCT_PATCH: usize = 8;
const DCT_STRIDE: usize = 4;

#[derive(Debug, Error)]
pub enum DenoiseError {
    #[error("invalid sigma {0}")]
    BadSigma(f64),
    #[error("empty external denoiser command")]
    EmptyCommand,
    #[error("failed to spawn denoiser {command:?}: {source}")]
    Spawn { command: String, source: io::Error },
    #[error("protocol error: {message}{}", stderr_suffix(.stderr))]
    Protocol { message: String, stderr: String },
    #[error("denoiser returned {got:?} (width, height), expected {expected:?}")]
    Shape {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("denoiser timed out after {0:?}")]
    Timeout(Duration),
    #[error("denoiser exited ({status}){}", stderr_suffix(.stderr))]
    Exited { status: String, stderr: String },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn stderr_suffix(stderr: &str) -> String {
    let trimmed = stderr.trim();
    if trimmed.is_empty() {
        String::new()
    } else {
        format!("; stderr: {trimmed}")
    }
}

/// Proxy image `r` and the noise level to remove.
#[derive(Debug, Clone)]
pub struct DenoiseRequest {
    pub image: Image,
    pub sigma: f64,
}

impl DenoiseRequest {
    pub fn new(image: Image, sigma: f64) -> Result<Self, DenoiseError> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(DenoiseError::BadSigma(sigma));
        }
        Ok(Self { image, sigma })
    }
}

/// Which denoiser to plug into the z-update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DenoiserKind {
    #[default]
    NativeDct,
    External {
        /// Program followed by its arguments.
        command: Vec<String>,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: f64,
    },
}

fn default_timeout_secs() -> f64 {
    DEFAULT_TIMEOUT.as_secs_f64()
}

impl DenoiserKind {
    /// External variant from a shell-like command line split on whitespace.
    pub fn external(command_line: &str) -> Self {
        DenoiserKind::External {
            command: command_line.split_whitespace().map(str::to_owned).collect(),
            timeout_secs: default_timeout_secs(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            DenoiserKind::NativeDct => "native".into(),
            DenoiserKind::External { command, .. } => format!("external:{}", command.join(" ")),
        }
    }

    /// Instantiate; for the external variant this spawns the child process.
    pub fn start(&self) -> Result<Box<dyn Denoiser>, DenoiseError> {
        match self {
            DenoiserKind::NativeDct => Ok(Box::new(NativeDct)),
            DenoiserKind::External { command, timeout_secs } => {
                let timeout = Duration::from_secs_f64(*timeout_secs);
                Ok(Box::new(ExternalDenoiser::spawn(command, timeout)?))
            }
        }
    }
}

pub trait Denoiser {
    /// Denoise one request. Implementations return the input unchanged when
    /// `sigma == 0`.
    fn denoise(&mut self, req: &DenoiseRequest) -> Result<Image, DenoiseError>;
}

/// One-shot convenience: start the denoiser, run one request.
pub fn denoise(kind: &DenoiserKind, req: &DenoiseRequest) -> Result<Image, DenoiseError> {
    if req.sigma == 0.0 {
        return Ok(req.image.clone());
    }
    kind.start()?.denoise(req)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NativeDct;

impl Denoiser for NativeDct {
    fn denoise(&mut self, req: &DenoiseRequest) -> Result<Image, DenoiseError> {
        if req.sigma == 0.0 {
            return Ok(req.image.clone());
        }
        Ok(native_dct_denoise(&req.image, req.sigma))
    }
}

/// Orthonormal DCT-II matrix, row `k` is the k-th basis vector.
pub fn dct_matrix(n: usize) -> Vec<f64> {
    let mut d = vec![0.0; n * n];
    for k in 0..n {
        let scale = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        for i in 0..n {
            d[k * n + i] = scale * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos();
        }
    }
    d
}

/// `D * p * D^T` for a row-major `n x n` patch, or the inverse when
/// `inverse` is set.
fn dct2(d: &[f64], patch: &[f64], n: usize, inverse: bool) -> Vec<f64> {
    let at = |r: usize, c: usize| if inverse { d[c * n + r] } else { d[r * n + c] };
    let mut tmp = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            tmp[r * n + c] = (0..n).map(|k| at(r, k) * patch[k * n + c]).sum();
        }
    }
    let mut out = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            out[r * n + c] = (0..n).map(|k| tmp[r * n + k] * at(c, k)).sum();
        }
    }
    out
}

/// Sliding-window DCT hard thresholding without the final clamp.
pub fn native_dct_denoise_unclamped(img: &Image, sigma: f64) -> Image {
    let (h, w) = img.dims();
    let n = DCT_PATCH.min(h).min(w);
    let d = dct_matrix(n);
    let threshold = DCT_THRESHOLD * sigma;
    let mut acc = vec![0.0; h * w];
    let mut counts = vec![0.0; h * w];
    let mut patch = vec![0.0; n * n];
    // tiny images: stride must not skip pixels
    let stride = DCT_STRIDE.min(n);
    for &r0 in &reference_positions(h, n, stride) {
        for &c0 in &reference_positions(w, n, stride) {
            for r in 0..n {
                patch[r * n..(r + 1) * n].copy_from_slice(&img.data()[(r0 + r) * w + c0..][..n]);
            }
            let mut coeffs = dct2(&d, &patch, n, false);
            // DC stays untouched
            for c in coeffs.iter_mut().skip(1) {
                if c.abs() < threshold {
                    *c = 0.0;
                }
            }
            let back = dct2(&d, &coeffs, n, true);
            for r in 0..n {
                for c in 0..n {
                    let p = (r0 + r) * w + c0 + c;
                    acc[p] += back[r * n + c];
                    counts[p] += 1.0;
                }
            }
        }
    }
    let data = acc.iter().zip(&counts).map(|(a, c)| a / c).collect();
    Image::new(h, w, data).expect("finite denoiser output")
}

/// 8x8 sliding DCT (stride 4), hard threshold at 2.7 sigma on all non-DC
/// coefficients, uniform aggregation, clamp to [0, 255].
pub fn native_dct_denoise(img: &Image, sigma: f64) -> Image {
    native_dct_denoise_unclamped(img, sigma).clamped()
}

pub fn encode_request(img: &Image, sigma: f64) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 4 * img.len());
    out.extend_from_slice(REQUEST_MAGIC);
    out.extend_from_slice(&(img.width() as u32).to_le_bytes());
    out.extend_from_slice(&(img.height() as u32).to_le_bytes());
    out.extend_from_slice(&(sigma as f32).to_le_bytes());
    for &v in img.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn encode_response(width: usize, height: usize, pixels: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * pixels.len());
    out.extend_from_slice(RESPONSE_MAGIC);
    out.extend_from_slice(&(width as u32).to_le_bytes());
    out.extend_from_slice(&(height as u32).to_le_bytes());
    for v in pixels {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// One decoded frame of either direction.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    /// Present on requests only.
    pub sigma: Option<f32>,
    pub pixels: Vec<f32>,
}

/// Read a frame with the given magic. Returns `Ok(None)` on a clean end of
/// stream before the first byte.
pub fn read_frame(mut r: impl Read, magic: &[u8; 8], with_sigma: bool) -> io::Result<Option<Frame>> {
    let mut head = [0u8; 8];
    let mut filled = 0;
    while filled < 8 {
        let n = r.read(&mut head[filled..])?;
        if n == 0 {
            if filled == 0 {
                return Ok(None);
            }
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated magic"));
        }
        filled += n;
    }
    if &head != magic {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("bad magic {:?}", String::from_utf8_lossy(&head)),
        ));
    }
    let mut dims = [0u8; 8];
    r.read_exact(&mut dims)?;
    let width = u32::from_le_bytes(dims[..4].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(dims[4..].try_into().unwrap()) as usize;
    let sigma = if with_sigma {
        let mut s = [0u8; 4];
        r.read_exact(&mut s)?;
        Some(f32::from_le_bytes(s))
    } else {
        None
    };
    let count = width
        .checked_mul(height)
        .filter(|&c| c <= 1 << 28)
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "frame too large"))?;
    let mut raw = vec![0u8; 4 * count];
    r.read_exact(&mut raw)?;
    let pixels = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Some(Frame {
        width,
        height,
        sigma,
        pixels,
    }))
}

/// Persistent child process serving denoise requests over its stdio.
pub struct ExternalDenoiser {
    command: String,
    child: Child,
    stdin: Option<ChildStdin>,
    responses: Receiver<io::Result<Frame>>,
    stderr: Arc<Mutex<String>>,
    timeout: Duration,
    failed: bool,
}

impl ExternalDenoiser {
    pub fn spawn(command: &[String], timeout: Duration) -> Result<Self, DenoiseError> {
        let (program, args) = command.split_first().ok_or(DenoiseError::EmptyCommand)?;
        let label = command.join(" ");
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|source| DenoiseError::Spawn {
                command: label.clone(),
                source,
            })?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, responses) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                let frame = read_frame(&mut reader, RESPONSE_MAGIC, false);
                let stop = !matches!(frame, Ok(Some(_)));
                let msg = match frame {
                    Ok(Some(f)) => Ok(f),
                    Ok(None) => Err(io::Error::new(io::ErrorKind::UnexpectedEof, "denoiser closed its output")),
                    Err(e) => Err(e),
                };
                if tx.send(msg).is_err() || stop {
                    break;
                }
            }
        });
        let stderr = Arc::new(Mutex::new(String::new()));
        if let Some(mut pipe) = child.stderr.take() {
            let sink = Arc::clone(&stderr);
            thread::spawn(move || {
                let mut buf = String::new();
                let _ = pipe.read_to_string(&mut buf);
                sink.lock().unwrap().push_str(&buf);
            });
        }
        Ok(Self {
            command: label,
            child,
            stdin,
            responses,
            stderr,
            timeout,
            failed: false,
        })
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    fn stderr_text(&self) -> String {
        // give the stderr reader a moment to drain after the child exits
        thread::sleep(Duration::from_millis(20));
        self.stderr.lock().unwrap().clone()
    }

    fn fail(&mut self, err: io::Error) -> DenoiseError {
        self.failed = true;
        let _ = self.child.kill();
        let status = self.child.wait().ok();
        let stderr = self.stderr_text();
        match status {
            Some(s) if !s.success() && err.kind() == io::ErrorKind::UnexpectedEof => DenoiseError::Exited {
                status: s.to_string(),
                stderr,
            },
            _ => DenoiseError::Protocol {
                message: err.to_string(),
                stderr,
            },
        }
    }

    fn round_trip(&mut self, req: &DenoiseRequest) -> Result<Image, DenoiseError> {
        if self.failed {
            return Err(DenoiseError::Protocol {
                message: "denoiser already failed".into(),
                stderr: String::new(),
            });
        }
        let frame = encode_request(&req.image, req.sigma);
        let write = self
            .stdin
            .as_mut()
            .expect("stdin open while running")
            .write_all(&frame)
            .and_then(|_| self.stdin.as_mut().unwrap().flush());
        if let Err(e) = write {
            let kind = e.kind();
            let err = if kind == io::ErrorKind::BrokenPipe {
                io::Error::new(io::ErrorKind::UnexpectedEof, e)
            } else {
                e
            };
            return Err(self.fail(err));
        }
        let response = match self.responses.recv_timeout(self.timeout) {
            Ok(Ok(frame)) => frame,
            Ok(Err(e)) => return Err(self.fail(e)),
            Err(RecvTimeoutError::Timeout) => {
                self.failed = true;
                let _ = self.child.kill();
                let _ = self.child.wait();
                return Err(DenoiseError::Timeout(self.timeout));
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(self.fail(io::Error::new(io::ErrorKind::UnexpectedEof, "reader stopped")))
            }
        };
        let expected = (req.image.width(), req.image.height());
        let got = (response.width, response.height);
        if got != expected || response.pixels.len() != req.image.len() {
            self.failed = true;
            let _ = self.child.kill();
            let _ = self.child.wait();
            return Err(DenoiseError::Shape { expected, got });
        }
        Ok(Image::new(
            req.image.height(),
            req.image.width(),
            response.pixels.iter().map(|&v| f64::from(v)).collect(),
        )?)
    }
}

impl Denoiser for ExternalDenoiser {
    fn denoise(&mut self, req: &DenoiseRequest) -> Result<Image, DenoiseError> {
        if req.sigma == 0.0 {
            return Ok(req.image.clone());
        }
        self.round_trip(req)
    }
}

impl Drop for ExternalDenoiser {
    fn drop(&mut self) {
        // closing stdin asks the child to exit
        drop(self.stdin.take());
        if !self.failed {
            for _ in 0..50 {
                if let Ok(Some(_)) = self.child.try_wait() {
                    return;
                }
                thread::sleep(Duration::from_millis(10));
            }
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    use rand_xoshiro::Xoshiro256PlusPlus;

    #[test]
    fn dct_is_orthonormal() {
        let n = 8;
        let d = dct_matrix(n);
        for a in 0..n {
            for b in 0..n {
                let dot: f64 = (0..n).map(|i| d[a * n + i] * d[b * n + i]).sum();
                assert!((dot - if a == b { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sigma_zero_is_identity() {
        let img = Image::from_fn(20, 13, |r, c| ((r * 7 + c * 3) % 200) as f64 + 0.25);
        let out = native_dct_denoise(&img, 0.0);
        assert!(out.max_abs_diff(&img) < 1e-10);
        let req = DenoiseRequest::new(img.clone(), 0.0).unwrap();
        assert_eq!(denoise(&DenoiserKind::NativeDct, &req).unwrap(), img);
        let ext = DenoiserKind::external("/nonexistent/denoiser");
        assert_eq!(denoise(&ext, &req).unwrap(), img);
    }

    #[test]
    fn constant_survives() {
        let img = Image::filled(16, 16, 77.0);
        let out = native_dct_denoise(&img, 40.0);
        assert!(out.max_abs_diff(&img) < 1e-10);
    }

    #[test]
    fn basis_function_killed_above_threshold() {
        let n = 8;
        let d = dct_matrix(n);
        let (k, l) = (2, 3);
        let img = Image::from_fn(n, n, |r, c| 128.0 + 100.0 * d[k * n + r] * d[l * n + c]);
        let kept = native_dct_denoise_unclamped(&img, 100.0 / 2.7 * 0.99);
        assert!(kept.max_abs_diff(&img) < 1e-9);
        let killed = native_dct_denoise_unclamped(&img, 100.0 / 2.7 * 1.01);
        assert!(killed.max_abs_diff(&Image::filled(n, n, 128.0)) < 1e-9);
    }

    #[test]
    fn dc_shift_commutes() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(4);
        let noise = Normal::new(0.0, 20.0).unwrap();
        let img = Image::from_fn(24, 24, |r, c| (r * 4 + c) as f64 + noise.sample(&mut rng));
        let shifted = img.map(|v| v + 33.0);
        let a = native_dct_denoise_unclamped(&img, 10.0).map(|v| v + 33.0);
        let b = native_dct_denoise_unclamped(&shifted, 10.0);
        assert!(a.max_abs_diff(&b) < 1e-9);
    }

    #[test]
    fn reduces_noise_on_ramp() {
        let clean = Image::from_fn(64, 64, |r, c| 40.0 + 1.5 * r as f64 + 1.0 * c as f64);
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(15);
        let noise = Normal::new(0.0, 15.0).unwrap();
        let noisy = clean.map(|v| v + noise.sample(&mut rng));
        let out = native_dct_denoise(&noisy, 15.0);
        let before = crate::image::mse(&clean, &noisy).unwrap();
        let after = crate::image::mse(&clean, &out).unwrap();
        assert!(after < before, "{after} !< {before}");
        assert!(out.data().iter().all(|v| (0.0..=255.0).contains(v)));
    }

    #[test]
    fn small_images_keep_shape() {
        let img = Image::from_fn(5, 11, |r, c| (r * c) as f64);
        assert_eq!(native_dct_denoise(&img, 5.0).dims(), (5, 11));
    }

    #[test]
    fn frame_codec() {
        let img = Image::from_fn(3, 2, |r, c| (r * 2 + c) as f64);
        let bytes = encode_request(&img, 12.5);
        assert_eq!(bytes.len(), 8 + 4 + 4 + 4 + 6 * 4);
        let frame = read_frame(&bytes[..], REQUEST_MAGIC, true).unwrap().unwrap();
        assert_eq!((frame.width, frame.height, frame.sigma), (2, 3, Some(12.5)));
        assert_eq!(frame.pixels, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!(read_frame(&bytes[..], RESPONSE_MAGIC, false).is_err());
        assert!(read_frame(&bytes[..bytes.len() - 1], REQUEST_MAGIC, true).is_err());
        assert!(read_frame(&[][..], REQUEST_MAGIC, true).unwrap().is_none());

        let resp = encode_response(2, 3, &frame.pixels);
        let back = read_frame(&resp[..], RESPONSE_MAGIC, false).unwrap().unwrap();
        assert_eq!(back.pixels, frame.pixels);
        assert_eq!(back.sigma, None);
    }

    #[test]
    fn spawn_failures() {
        let req = DenoiseRequest::new(Image::zeros(4, 4), 3.0).unwrap();
        assert!(matches!(
            denoise(&DenoiserKind::external("/nonexistent/denoiser"), &req),
            Err(DenoiseError::Spawn { .. })
        ));
        assert!(matches!(
            denoise(&DenoiserKind::external("   "), &req),
            Err(DenoiseError::EmptyCommand)
        ));
        assert!(matches!(DenoiseRequest::new(Image::zeros(1, 1), -1.0), Err(DenoiseError::BadSigma(_))));
    }
}
