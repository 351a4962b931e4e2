//! Block compressive sensing: one shared row-orthonormal Gaussian projection
//! applied to every non-overlapping `B x B` block of the image.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use thiserror::Error;

use crate::image::Image;
use crate::par;

pub const MEASUREMENT_MAGIC: &[u8; 8] = b"HPNPMEAS";
const HEADER_LEN: usize = 8 + 4 * 4 + 8;

#[derive(Debug, Error)]
pub enum SensingError {
    #[error("sampling ratio {0} outside (0, 1]")]
    BadRatio(f64),
    #[error("block size {0} too small (need >= 2)")]
    BadBlockSize(usize),
    #[error("measurement count {rows} invalid for block size {block_size}")]
    BadRows { block_size: usize, rows: usize },
    #[error("image {height}x{width} not divisible into {block_size}x{block_size} blocks")]
    NotDivisible {
        height: usize,
        width: usize,
        block_size: usize,
    },
    #[error("measurement geometry mismatch: {0}")]
    Geometry(String),
    #[error("bad measurement file magic {0:?}")]
    BadMagic([u8; 8]),
    #[error("measurement file truncated: {0}")]
    Truncated(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Shared per-block projection `Phi_B` (rows x B^2, row-major) with the cached
/// Gram matrix `Phi_B^T Phi_B`.
#[derive(Debug, Clone)]
pub struct BlockSensor {
    block_size: usize,
    rows: usize,
    seed: u64,
    matrix: Vec<f64>,
    gram: Vec<f64>,
}

/// Number of measurements per block for a sampling ratio.
pub fn rows_for_ratio(block_size: usize, ratio: f64) -> Result<usize, SensingError> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(SensingError::BadRatio(ratio));
    }
    let n = block_size * block_size;
    Ok(((ratio * n as f64).round() as usize).clamp(1, n))
}

impl BlockSensor {
    /// Seeded Gaussian draw, rows orthonormalized.
    pub fn new(block_size: usize, ratio: f64, seed: u64) -> Result<Self, SensingError> {
        if block_size < 2 {
            return Err(SensingError::BadBlockSize(block_size));
        }
        let rows = rows_for_ratio(block_size, ratio)?;
        Self::with_rows(block_size, rows, seed)
    }

    /// Same construction with the measurement count given directly.
    pub fn with_rows(block_size: usize, rows: usize, seed: u64) -> Result<Self, SensingError> {
        if block_size < 2 {
            return Err(SensingError::BadBlockSize(block_size));
        }
        let n = block_size * block_size;
        if rows == 0 || rows > n {
            return Err(SensingError::BadRows { block_size, rows });
        }
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let mut matrix: Vec<f64> = (0..rows * n).map(|_| rng.sample(StandardNormal)).collect();
        orthonormalize_rows(&mut matrix, rows, n);
        let gram = gram_of(&matrix, rows, n);
        Ok(Self {
            block_size,
            rows,
            seed,
            matrix,
            gram,
        })
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    /// Measurements per block, `M_B`.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Pixels per block, `B^2`.
    pub fn cols(&self) -> usize {
        self.block_size * self.block_size
    }

    pub fn ratio(&self) -> f64 {
        self.rows as f64 / self.cols() as f64
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Row-major `rows x B^2` projection.
    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    /// Row-major `B^2 x B^2` Gram matrix `Phi^T Phi`.
    pub fn gram(&self) -> &[f64] {
        &self.gram
    }

    pub fn project_block(&self, block: &[f64]) -> Vec<f64> {
        let n = self.cols();
        self.matrix
            .chunks_exact(n)
            .map(|row| row.iter().zip(block).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn back_project_block(&self, y: &[f64]) -> Vec<f64> {
        let n = self.cols();
        let mut out = vec![0.0; n];
        for (row, &yi) in self.matrix.chunks_exact(n).zip(y) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * yi;
            }
        }
        out
    }

    pub fn gram_block(&self, block: &[f64]) -> Vec<f64> {
        let n = self.cols();
        self.gram
            .chunks_exact(n)
            .map(|row| row.iter().zip(block).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn grid(&self, img: &Image) -> Result<(usize, usize), SensingError> {
        let (h, w) = img.dims();
        let b = self.block_size;
        if h % b != 0 || w % b != 0 {
            return Err(SensingError::NotDivisible {
                height: h,
                width: w,
                block_size: b,
            });
        }
        Ok((h / b, w / b))
    }

    fn check(&self, meas: &Measurements) -> Result<(), SensingError> {
        if meas.block_size != self.block_size || meas.rows != self.rows {
            return Err(SensingError::Geometry(format!(
                "sensor B={} M={} but measurements B={} M={}",
                self.block_size, self.rows, meas.block_size, meas.rows
            )));
        }
        if meas.seed != self.seed {
            return Err(SensingError::Geometry(format!(
                "sensor seed {} but measurements seed {}",
                self.seed, meas.seed
            )));
        }
        Ok(())
    }

    /// `y_j = Phi_B x_j` for every block `j` in row-major block order.
    pub fn measure(&self, img: &Image) -> Result<Measurements, SensingError> {
        self.measure_with(img, true)
    }

    pub fn measure_with(&self, img: &Image, parallel: bool) -> Result<Measurements, SensingError> {
        let (by, bx) = self.grid(img)?;
        let blocks = par::map_indexed(by * bx, parallel, |j| {
            self.project_block(&read_block(img, self.block_size, j / bx, j % bx))
        });
        Ok(Measurements {
            block_size: self.block_size,
            rows: self.rows,
            blocks_y: by,
            blocks_x: bx,
            seed: self.seed,
            data: blocks.concat(),
        })
    }

    /// Blockwise `Phi_B^T y_j` placed back on the image grid.
    pub fn adjoint(&self, meas: &Measurements) -> Result<Image, SensingError> {
        self.adjoint_with(meas, true)
    }

    pub fn adjoint_with(&self, meas: &Measurements, parallel: bool) -> Result<Image, SensingError> {
        self.check(meas)?;
        let b = self.block_size;
        let bx = meas.blocks_x;
        let blocks = par::map_indexed(meas.blocks_y * bx, parallel, |j| {
            self.back_project_block(meas.block(j))
        });
        Ok(assemble(&blocks, meas.blocks_y, bx, b))
    }

    /// Blockwise `Phi_B^T Phi_B x` through the cached Gram matrix.
    pub fn apply_gram(&self, img: &Image, parallel: bool) -> Result<Image, SensingError> {
        let (by, bx) = self.grid(img)?;
        let b = self.block_size;
        let blocks = par::map_indexed(by * bx, parallel, |j| {
            self.gram_block(&read_block(img, b, j / bx, j % bx))
        });
        Ok(assemble(&blocks, by, bx, b))
    }

    /// Initial reconstruction: the adjoint image refined by `smoothing_iters`
    /// rounds of a Landweber data-consistency step followed by a 3x3 Gaussian
    /// smoothing (sigma 0.8, reflected borders) and a clamp to [0, 255].
    pub fn initial_estimate(&self, meas: &Measurements, smoothing_iters: usize) -> Result<Image, SensingError> {
        let mut x = self.adjoint(meas)?;
        for _ in 0..smoothing_iters {
            let residual = meas.minus(&self.measure(&x)?)?;
            let step = self.adjoint(&residual)?;
            x = &x + &step;
            x = gaussian_smooth_3x3(&x, 0.8).clamped();
        }
        Ok(x)
    }
}

/// Modified Gram-Schmidt, applied twice for numerical orthogonality.
fn orthonormalize_rows(matrix: &mut [f64], rows: usize, n: usize) {
    for i in 0..rows {
        for _pass in 0..2 {
            for j in 0..i {
                let (done, rest) = matrix.split_at_mut(i * n);
                let qj = &done[j * n..(j + 1) * n];
                let vi = &mut rest[..n];
                let proj: f64 = qj.iter().zip(vi.iter()).map(|(a, b)| a * b).sum();
                for (v, q) in vi.iter_mut().zip(qj) {
                    *v -= proj * q;
                }
            }
        }
        let vi = &mut matrix[i * n..(i + 1) * n];
        let norm = vi.iter().map(|v| v * v).sum::<f64>().sqrt();
        // Gaussian rows are linearly independent with probability one.
        assert!(norm > 1e-8, "degenerate Gaussian draw");
        vi.iter_mut().for_each(|v| *v /= norm);
    }
}

fn gram_of(matrix: &[f64], rows: usize, n: usize) -> Vec<f64> {
    let mut gram = vec![0.0; n * n];
    for row in matrix.chunks_exact(n).take(rows) {
        for a in 0..n {
            let ra = row[a];
            if ra == 0.0 {
                continue;
            }
            let g = &mut gram[a * n..a * n + n];
            for b in a..n {
                g[b] += ra * row[b];
            }
        }
    }
    for a in 0..n {
        for b in 0..a {
            gram[a * n + b] = gram[b * n + a];
        }
    }
    gram
}

fn read_block(img: &Image, b: usize, by: usize, bx: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(b * b);
    let w = img.width();
    let data = img.data();
    for r in 0..b {
        let start = (by * b + r) * w + bx * b;
        out.extend_from_slice(&data[start..start + b]);
    }
    out
}

fn assemble(blocks: &[Vec<f64>], by: usize, bx: usize, b: usize) -> Image {
    let w = bx * b;
    let mut data = vec![0.0; by * b * w];
    for (j, block) in blocks.iter().enumerate() {
        let (gy, gx) = (j / bx, j % bx);
        for r in 0..b {
            let start = (gy * b + r) * w + gx * b;
            data[start..start + b].copy_from_slice(&block[r * b..(r + 1) * b]);
        }
    }
    Image::new(by * b, w, data).expect("assembled blocks are finite")
}

/// Separable 3x3 Gaussian with mirror reflection at the borders
/// (index -1 maps to 1).
pub fn gaussian_smooth_3x3(img: &Image, sigma: f64) -> Image {
    let side = (-1.0 / (2.0 * sigma * sigma)).exp();
    let norm = 1.0 + 2.0 * side;
    let (k0, k1) = (1.0 / norm, side / norm);
    let (h, w) = img.dims();
    let reflect = |i: isize, n: usize| -> usize {
        if n == 1 {
            0
        } else if i < 0 {
            (-i) as usize
        } else if i as usize >= n {
            2 * (n - 1) - i as usize
        } else {
            i as usize
        }
    };
    let horizontal = Image::from_fn(h, w, |r, c| {
        let c = c as isize;
        k1 * img.get(r, reflect(c - 1, w)) + k0 * img.get(r, c as usize) + k1 * img.get(r, reflect(c + 1, w))
    });
    Image::from_fn(h, w, |r, c| {
        let r = r as isize;
        k1 * horizontal.get(reflect(r - 1, h), c)
            + k0 * horizontal.get(r as usize, c)
            + k1 * horizontal.get(reflect(r + 1, h), c)
    })
}

/// Per-block measurement vectors in row-major block order.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurements {
    block_size: usize,
    rows: usize,
    blocks_y: usize,
    blocks_x: usize,
    seed: u64,
    data: Vec<f64>,
}

impl Measurements {
    pub fn new(
        block_size: usize,
        rows: usize,
        blocks_y: usize,
        blocks_x: usize,
        seed: u64,
        data: Vec<f64>,
    ) -> Result<Self, SensingError> {
        if data.len() != rows * blocks_y * blocks_x {
            return Err(SensingError::Geometry(format!(
                "{} values for {blocks_y}x{blocks_x} blocks of {rows}",
                data.len()
            )));
        }
        Ok(Self {
            block_size,
            rows,
            blocks_y,
            blocks_x,
            seed,
            data,
        })
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn blocks_y(&self) -> usize {
        self.blocks_y
    }

    pub fn blocks_x(&self) -> usize {
        self.blocks_x
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Image dimensions `(height, width)` the measurements describe.
    pub fn image_dims(&self) -> (usize, usize) {
        (self.blocks_y * self.block_size, self.blocks_x * self.block_size)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn block(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn dot(&self, other: &Measurements) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn scaled(&self, alpha: f64) -> Measurements {
        Measurements {
            data: self.data.iter().map(|v| v * alpha).collect(),
            ..self.clone()
        }
    }

    fn same_geometry(&self, other: &Measurements) -> Result<(), SensingError> {
        if (self.block_size, self.rows, self.blocks_y, self.blocks_x)
            != (other.block_size, other.rows, other.blocks_y, other.blocks_x)
        {
            return Err(SensingError::Geometry("measurement sets differ in shape".into()));
        }
        Ok(())
    }

    pub fn minus(&self, other: &Measurements) -> Result<Measurements, SensingError> {
        self.same_geometry(other)?;
        Ok(Measurements {
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
            ..self.clone()
        })
    }

    /// Binary layout: magic `HPNPMEAS`, u32 block size, u32 rows, u32 blocks_y,
    /// u32 blocks_x, u64 seed, then the f64 payload; all little-endian.
    pub fn write_to(&self, mut w: impl Write) -> Result<(), SensingError> {
        let mut buf = Vec::with_capacity(HEADER_LEN + 8 * self.data.len());
        buf.extend_from_slice(MEASUREMENT_MAGIC);
        for v in [self.block_size, self.rows, self.blocks_y, self.blocks_x] {
            let v = u32::try_from(v).map_err(|_| SensingError::Geometry(format!("{v} exceeds u32")))?;
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&self.seed.to_le_bytes());
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, SensingError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SensingError> {
        if bytes.len() < HEADER_LEN {
            return Err(SensingError::Truncated(format!("header has {} bytes", bytes.len())));
        }
        let magic: [u8; 8] = bytes[..8].try_into().unwrap();
        if &magic != MEASUREMENT_MAGIC {
            return Err(SensingError::BadMagic(magic));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let (block_size, rows, blocks_y, blocks_x) = (u32_at(8), u32_at(12), u32_at(16), u32_at(20));
        let seed = u64::from_le_bytes(bytes[24..32].try_into().unwrap());
        if block_size < 2 || rows == 0 || rows > block_size * block_size || blocks_y == 0 || blocks_x == 0 {
            return Err(SensingError::Geometry(format!(
                "invalid header B={block_size} M={rows} grid={blocks_y}x{blocks_x}"
            )));
        }
        let count = rows * blocks_y * blocks_x;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != 8 * count {
            return Err(SensingError::Truncated(format!(
                "payload has {} bytes, expected {}",
                payload.len(),
                8 * count
            )));
        }
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(block_size, rows, blocks_y, blocks_x, seed, data)
    }
}
