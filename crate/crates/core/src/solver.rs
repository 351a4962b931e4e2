//! Hybrid plug-and-play reconstruction.
//!
//! Each outer iteration regroups patches on the current estimate, shrinks
//! every group with the weighted nuclear norm prox, then runs `admm_inner`
//! rounds of
//!
//! ```text
//! x <- x - eta * q            (grad_steps times)
//! z <- F(x - c, sqrt(rho / tau))
//! c <- c - (x - z)
//! ```
//!
//! with `q = Phi^T Phi x - Phi^T y + tau (x - z - c) + mu (C . x - S)`, where
//! `S = sum_i R_i^T L_i` and `C` is the patch coverage map. `c` is reset to
//! zero and `z` to the current estimate at the start of every outer
//! iteration.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::denoise::{DenoiseError, DenoiseRequest, Denoiser, DenoiserKind};
use crate::image::{psnr, Image, ImageError};
use crate::lowrank::{lowrank_pass_with, LowRankError, WnnmParams};
use crate::patches::{Aggregation, AggregationMode, PatchError, PatchGeometry, PatchGroupIndex};
use crate::sensing::{BlockSensor, Measurements, SensingError};
use crate::timing::Stopwatch;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("iteration {iteration}, {phase}: {source}")]
    Phase {
        iteration: usize,
        phase: Phase,
        #[source]
        source: Box<SolverError>,
    },
    #[error(transparent)]
    Sensing(#[from] SensingError),
    #[error(transparent)]
    Patch(#[from] PatchError),
    #[error(transparent)]
    LowRank(#[from] LowRankError),
    #[error(transparent)]
    Denoise(#[from] DenoiseError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Init,
    Grouping,
    LowRank,
    XUpdate,
    ZUpdate,
    DualUpdate,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Phase::Init => "initial estimate",
            Phase::Grouping => "patch grouping",
            Phase::LowRank => "low-rank pass",
            Phase::XUpdate => "x-update",
            Phase::ZUpdate => "z-update",
            Phase::DualUpdate => "dual update",
        };
        f.write_str(name)
    }
}

fn in_phase<T, E: Into<SolverError>>(iteration: usize, phase: Phase, r: Result<T, E>) -> Result<T, SolverError> {
    r.map_err(|e| SolverError::Phase {
        iteration,
        phase,
        source: Box::new(e.into()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Low-rank coupling weight.
    pub mu: f64,
    /// Rank penalty weight; the group threshold is `lambda / mu`.
    pub lambda: f64,
    /// Denoiser prior weight.
    pub rho: f64,
    /// ADMM penalty.
    pub tau: f64,
    /// Gradient step size.
    pub eta: f64,
    /// Outer iteration cap `K`.
    pub max_iters: usize,
    /// Relative-change stopping threshold.
    pub upsilon: f64,
    pub admm_inner: usize,
    pub grad_steps: usize,
    pub regroup_every: usize,
    pub geometry: PatchGeometry,
    /// WNNM noise proxy `sigma_w(0)`; iteration `k` uses
    /// `noise_floor * noise_decay^k`.
    pub noise_floor: f64,
    pub noise_decay: f64,
    pub c_weight: f64,
    pub init_smoothing_iters: usize,
    pub denoiser: DenoiserKind,
    /// Parallel group search, shrinkage and block products. With one worker
    /// thread the output is bit-identical to the sequential path; with more,
    /// aggregation order changes results at rounding level.
    pub parallel: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            mu: 0.002,
            lambda: 0.0,
            rho: 0.0,
            tau: 0.0,
            eta: 1.0,
            max_iters: 60,
            upsilon: 1e-5,
            admm_inner: 1,
            grad_steps: 2,
            regroup_every: 1,
            geometry: PatchGeometry::default(),
            noise_floor: 0.0,
            noise_decay: 0.95,
            c_weight: 2.0 * std::f64::consts::SQRT_2,
            init_smoothing_iters: 8,
            denoiser: DenoiserKind::NativeDct,
            parallel: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |msg: String| Err(SolverError::Config(msg));
        for (name, v) in [
            ("mu", self.mu),
            ("lambda", self.lambda),
            ("rho", self.rho),
            ("tau", self.tau),
            ("upsilon", self.upsilon),
            ("noise_floor", self.noise_floor),
            ("noise_decay", self.noise_decay),
            ("c_weight", self.c_weight),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} = {v} must be finite and >= 0"));
            }
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return bad(format!("eta = {} must be > 0", self.eta));
        }
        if self.rho > 0.0 && self.tau <= 0.0 {
            return bad("tau must be > 0 when rho > 0".into());
        }
        if self.max_iters == 0 || self.admm_inner == 0 || self.grad_steps == 0 || self.regroup_every == 0 {
            return bad("max_iters, admm_inner, grad_steps and regroup_every must be >= 1".into());
        }
        self.geometry.validate()?;
        if let DenoiserKind::External { command, .. } = &self.denoiser {
            if command.is_empty() {
                return bad("external denoiser command is empty".into());
            }
        }
        Ok(())
    }

    /// Group threshold `lambda / mu` (zero when the low-rank term is off).
    pub fn theta(&self) -> f64 {
        if self.mu > 0.0 {
            self.lambda / self.mu
        } else {
            0.0
        }
    }

    /// Denoiser strength `sqrt(rho / tau)`.
    pub fn denoiser_sigma(&self) -> f64 {
        if self.rho == 0.0 {
            0.0
        } else {
            (self.rho / self.tau).sqrt()
        }
    }

    /// WNNM parameters for 1-based outer iteration `k`.
    pub fn wnnm_params(&self, k: usize) -> WnnmParams {
        WnnmParams {
            theta: self.theta(),
            c_weight: self.c_weight,
            eps: 1e-16,
            noise_floor: self.noise_floor * self.noise_decay.powi(k as i32),
        }
    }

    /// Bound on the gradient's Lipschitz constant for a coverage map with
    /// maximum `max_coverage` (row-orthonormal sensing).
    pub fn lipschitz_bound(&self, max_coverage: f64) -> f64 {
        1.0 + self.tau + self.mu * max_coverage
    }

    fn aggregation_mode(&self) -> AggregationMode {
        if self.parallel {
            AggregationMode::Parallel
        } else {
            AggregationMode::Sequential
        }
    }
}

/// Data-fidelity block with `Phi^T y` cached.
pub struct Fidelity<'a> {
    pub sensor: &'a BlockSensor,
    pub meas: &'a Measurements,
    pub aty: Image,
}

impl<'a> Fidelity<'a> {
    pub fn new(sensor: &'a BlockSensor, meas: &'a Measurements) -> Result<Self, SolverError> {
        let aty = sensor.adjoint(meas)?;
        Ok(Self { sensor, meas, aty })
    }

    /// `0.5 * ||y - Phi x||^2`
    pub fn value(&self, x: &Image) -> Result<f64, SolverError> {
        let r = self.meas.minus(&self.sensor.measure(x)?)?;
        Ok(0.5 * r.dot(&r))
    }
}

/// Gradient of the x-subproblem objective
/// `0.5 ||y - Phi x||^2 + mu/2 sum ||R_i x - L_i||^2 + tau/2 ||x - z - c||^2`.
pub fn gradient(
    x: &Image,
    fidelity: &Fidelity<'_>,
    lowrank: Option<&Aggregation>,
    z: &Image,
    c: &Image,
    cfg: &SolverConfig,
) -> Result<Image, SolverError> {
    x.same_shape(z)?;
    x.same_shape(c)?;
    x.same_shape(&fidelity.aty)?;
    let gram_x = fidelity.sensor.apply_gram(x, cfg.parallel)?;
    let mut q: Vec<f64> = gram_x
        .data()
        .iter()
        .zip(fidelity.aty.data())
        .map(|(g, a)| g - a)
        .collect();
    if cfg.tau != 0.0 {
        for (((qi, xi), zi), ci) in q.iter_mut().zip(x.data()).zip(z.data()).zip(c.data()) {
            *qi += cfg.tau * (xi - zi - ci);
        }
    }
    if cfg.mu != 0.0 {
        let agg = lowrank.ok_or_else(|| SolverError::Config("mu > 0 but no low-rank aggregation".into()))?;
        x.same_shape(&agg.sum)?;
        for (((qi, xi), s), w) in q
            .iter_mut()
            .zip(x.data())
            .zip(agg.sum.data())
            .zip(agg.weights.data())
        {
            *qi += cfg.mu * (w * xi - s);
        }
    }
    Ok(Image::new(x.height(), x.width(), q)?)
}

/// `grad_steps` steps of `x <- x - eta q`, no clamping.
pub fn x_update(
    x: &Image,
    fidelity: &Fidelity<'_>,
    lowrank: Option<&Aggregation>,
    z: &Image,
    c: &Image,
    cfg: &SolverConfig,
) -> Result<Image, SolverError> {
    let mut x = x.clone();
    for _ in 0..cfg.grad_steps {
        let q = gradient(&x, fidelity, lowrank, z, c, cfg)?;
        for (xi, qi) in x.data_mut().iter_mut().zip(q.data()) {
            *xi -= cfg.eta * qi;
        }
    }
    Ok(x)
}

/// `z = F(x - c, sqrt(rho / tau))`
pub fn z_update(x: &Image, c: &Image, cfg: &SolverConfig, denoiser: &mut dyn Denoiser) -> Result<Image, SolverError> {
    x.same_shape(c)?;
    let r = x - c;
    let req = DenoiseRequest::new(r, cfg.denoiser_sigma())?;
    Ok(denoiser.denoise(&req)?)
}

/// `c - (x - z)`
pub fn dual_update(c: &Image, x: &Image, z: &Image) -> Result<Image, SolverError> {
    c.same_shape(x)?;
    c.same_shape(z)?;
    Ok(Image::new(
        c.height(),
        c.width(),
        c.data()
            .iter()
            .zip(x.data())
            .zip(z.data())
            .map(|((ci, xi), zi)| ci - (xi - zi))
            .collect(),
    )?)
}

/// `||current - previous||^2 / ||previous||^2`
pub fn relative_change(previous: &Image, current: &Image) -> f64 {
    let num: f64 = previous
        .data()
        .iter()
        .zip(current.data())
        .map(|(a, b)| (b - a) * (b - a))
        .sum();
    let den = previous.norm_sq();
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub relative_change: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psnr: Option<f64>,
    /// `0.5 ||y - Phi x||^2` after the iteration.
    pub fidelity: f64,
    pub noise_floor: f64,
    pub regrouped: bool,
    pub timings: PhaseTimings,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub grouping: f64,
    pub lowrank: f64,
    pub x_update: f64,
    pub z_update: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Converged,
    MaxIterations,
}

/// Call counts, for checking the loop structure.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolverCounters {
    pub groupings: usize,
    pub lowrank_passes: usize,
    pub x_updates: usize,
    pub z_updates: usize,
    pub dual_updates: usize,
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    /// Final estimate clamped to [0, 255].
    pub image: Image,
    pub initial: Image,
    pub history: Vec<IterationRecord>,
    pub stop: StopReason,
    pub counters: SolverCounters,
}

impl Reconstruction {
    pub fn iterations(&self) -> usize {
        self.history.len()
    }

    /// History as JSON lines, one record per outer iteration.
    pub fn write_history(&self, mut w: impl Write) -> Result<(), SolverError> {
        for rec in &self.history {
            serde_json::to_writer(&mut w, rec).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// What an observer sees after each outer iteration.
pub struct IterationView<'a> {
    pub record: &'a IterationRecord,
    pub previous: &'a Image,
    pub current: &'a Image,
}

pub fn reconstruct(
    sensor: &BlockSensor,
    meas: &Measurements,
    cfg: &SolverConfig,
    ground_truth: Option<&Image>,
) -> Result<Reconstruction, SolverError> {
    let mut denoiser = in_phase(0, Phase::Init, cfg.denoiser.start())?;
    reconstruct_observed(sensor, meas, cfg, ground_truth, denoiser.as_mut(), &mut |_| {})
}

/// Full solver loop with an explicit denoiser instance and a per-iteration
/// observer.
pub fn reconstruct_observed(
    sensor: &BlockSensor,
    meas: &Measurements,
    cfg: &SolverConfig,
    ground_truth: Option<&Image>,
    denoiser: &mut dyn Denoiser,
    observer: &mut dyn FnMut(&IterationView<'_>),
) -> Result<Reconstruction, SolverError> {
    cfg.validate()?;
    let dims = meas.image_dims();
    if let Some(gt) = ground_truth {
        if gt.dims() != dims {
            return Err(ImageError::ShapeMismatch(gt.dims(), dims).into());
        }
    }
    let fidelity = in_phase(0, Phase::Init, Fidelity::new(sensor, meas))?;
    let initial = in_phase(0, Phase::Init, sensor.initial_estimate(meas, cfg.init_smoothing_iters))?;
    let mut x = initial.clone();
    let mut index: Option<PatchGroupIndex> = None;
    let mut history = Vec::new();
    let mut counters = SolverCounters::default();
    let mut stop = StopReason::MaxIterations;
    let mut warned = false;

    for k in 1..=cfg.max_iters {
        let total = Stopwatch::start();
        let mut timings = PhaseTimings::default();
        let previous = x.clone();

        let mut lowrank = None;
        let mut regrouped = false;
        let wnnm = cfg.wnnm_params(k);
        if cfg.mu > 0.0 {
            if index.is_none() || (k - 1) % cfg.regroup_every == 0 {
                let t = Stopwatch::start();
                index = Some(in_phase(
                    k,
                    Phase::Grouping,
                    PatchGroupIndex::build_with(&x, &cfg.geometry, cfg.parallel),
                )?);
                counters.groupings += 1;
                regrouped = true;
                timings.grouping = t.elapsed_secs();
            }
            let t = Stopwatch::start();
            let idx = index.as_ref().expect("index built above");
            let stack = in_phase(
                k,
                Phase::LowRank,
                lowrank_pass_with(&x, idx, &wnnm, cfg.parallel, cfg.aggregation_mode()),
            )?;
            counters.lowrank_passes += 1;
            timings.lowrank = t.elapsed_secs();
            if !warned {
                let max_c = stack.aggregation.weights.data().iter().copied().fold(0.0, f64::max);
                let bound = cfg.lipschitz_bound(max_c);
                if cfg.eta > 1.0 / bound {
                    log::warn!(
                        "step size {} exceeds 1/L = {:.4} (L <= {:.4}); gradient steps may not descend",
                        cfg.eta,
                        1.0 / bound,
                        bound
                    );
                }
                warned = true;
            }
            lowrank = Some(stack.aggregation);
        }

        let mut z = x.clone();
        let mut c = Image::zeros(dims.0, dims.1);
        for _ in 0..cfg.admm_inner {
            let t = Stopwatch::start();
            x = in_phase(k, Phase::XUpdate, x_update(&x, &fidelity, lowrank.as_ref(), &z, &c, cfg))?;
            counters.x_updates += 1;
            timings.x_update += t.elapsed_secs();

            let t = Stopwatch::start();
            z = in_phase(k, Phase::ZUpdate, z_update(&x, &c, cfg, denoiser))?;
            counters.z_updates += 1;
            timings.z_update += t.elapsed_secs();

            c = in_phase(k, Phase::DualUpdate, dual_update(&c, &x, &z))?;
            counters.dual_updates += 1;
        }

        let change = relative_change(&previous, &x);
        let psnr_k = match ground_truth {
            Some(gt) => Some(psnr(gt, &x.clamped())?),
            None => None,
        };
        timings.total = total.elapsed_secs();
        let record = IterationRecord {
            iteration: k,
            relative_change: change,
            psnr: psnr_k,
            fidelity: fidelity.value(&x)?,
            noise_floor: wnnm.noise_floor,
            regrouped,
            timings,
        };
        observer(&IterationView {
            record: &record,
            previous: &previous,
            current: &x,
        });
        log::debug!(
            "iter {k}: change {change:.3e} psnr {:?} ({:.2}s)",
            psnr_k,
            timings.total
        );
        history.push(record);
        if change < cfg.upsilon {
            stop = StopReason::Converged;
            break;
        }
    }

    Ok(Reconstruction {
        image: x.clamped(),
        initial,
        history,
        stop,
        counters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoise::NativeDct;

    fn tiny_problem(ratio: f64) -> (BlockSensor, Image, Measurements) {
        let sensor = BlockSensor::new(8, ratio, 3).unwrap();
        let img = Image::from_fn(16, 16, |r, c| 60.0 + 5.0 * r as f64 + 3.0 * c as f64 + ((r * c) % 7) as f64);
        let meas = sensor.measure(&img).unwrap();
        (sensor, img, meas)
    }

    fn small_cfg() -> SolverConfig {
        SolverConfig {
            geometry: PatchGeometry {
                patch_side: 4,
                stride: 4,
                group_size: 6,
                window: 8,
            },
            parallel: false,
            ..Default::default()
        }
    }

    #[test]
    fn validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let cfg = SolverConfig {
            rho: 1.0,
            tau: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        assert!(SolverConfig { eta: 0.0, ..Default::default() }.validate().is_err());
        assert!(SolverConfig { max_iters: 0, ..Default::default() }.validate().is_err());
        assert!(SolverConfig { mu: -1.0, ..Default::default() }.validate().is_err());
        let ext = SolverConfig {
            denoiser: DenoiserKind::External {
                command: vec![],
                timeout_secs: 1.0,
            },
            ..Default::default()
        };
        assert!(ext.validate().is_err());
    }

    #[test]
    fn pure_least_squares_gradient() {
        let (sensor, img, meas) = tiny_problem(0.5);
        let fid = Fidelity::new(&sensor, &meas).unwrap();
        let cfg = SolverConfig {
            mu: 0.0,
            tau: 0.0,
            ..small_cfg()
        };
        let x = img.map(|v| v * 0.9 + 4.0);
        let zero = Image::zeros(16, 16);
        let q = gradient(&x, &fid, None, &zero, &zero, &cfg).unwrap();
        let residual = sensor.measure(&x).unwrap().minus(&meas).unwrap();
        let expected = sensor.adjoint(&residual).unwrap();
        assert!(q.max_abs_diff(&expected) < 1e-9);
    }

    #[test]
    fn gradient_vanishes_at_stationary_point() {
        let (sensor, img, meas) = tiny_problem(0.4);
        let fid = Fidelity::new(&sensor, &meas).unwrap();
        let cfg = SolverConfig {
            mu: 0.01,
            tau: 0.3,
            lambda: 0.0,
            ..small_cfg()
        };
        let index = PatchGroupIndex::build(&img, &cfg.geometry).unwrap();
        let stack = lowrank_pass_with(&img, &index, &cfg.wnnm_params(1), false, AggregationMode::Sequential).unwrap();
        let c = Image::filled(16, 16, 2.0);
        let z = &img - &c;
        let q = gradient(&img, &fid, Some(&stack.aggregation), &z, &c, &cfg).unwrap();
        assert!(q.data().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn x_update_steps() {
        let (sensor, img, meas) = tiny_problem(0.5);
        let fid = Fidelity::new(&sensor, &meas).unwrap();
        let cfg = SolverConfig {
            mu: 0.0,
            ..small_cfg()
        };
        let zero = Image::zeros(16, 16);
        // already a fixed point
        let out = x_update(&img, &fid, None, &zero, &zero, &cfg).unwrap();
        assert!(out.max_abs_diff(&img) < 1e-9);

        let one = SolverConfig {
            grad_steps: 1,
            eta: 1.0,
            ..cfg
        };
        let x = img.map(|v| v + 10.0);
        let q = gradient(&x, &fid, None, &zero, &zero, &one).unwrap();
        let stepped = x_update(&x, &fid, None, &zero, &zero, &one).unwrap();
        assert_eq!(stepped, &x - &q);
    }

    #[test]
    fn z_update_reductions() {
        let x = Image::from_fn(8, 8, |r, c| (r * 8 + c) as f64);
        let c = Image::filled(8, 8, 1.5);
        let cfg = SolverConfig {
            rho: 0.0,
            tau: 1.0,
            ..Default::default()
        };
        let z = z_update(&x, &c, &cfg, &mut NativeDct).unwrap();
        assert_eq!(z, &x - &c);
        let zero = Image::zeros(8, 8);
        assert_eq!(z_update(&x, &zero, &cfg, &mut NativeDct).unwrap(), x);
    }

    #[test]
    fn dual_update_cases() {
        let x = Image::filled(4, 4, 5.0);
        let c = Image::filled(4, 4, 1.0);
        assert_eq!(dual_update(&c, &x, &x).unwrap(), c);
        let z = Image::filled(4, 4, 2.0);
        let zero = Image::zeros(4, 4);
        assert_eq!(dual_update(&zero, &x, &z).unwrap(), Image::filled(4, 4, -3.0));
        let twice = dual_update(&dual_update(&c, &x, &z).unwrap(), &x, &z).unwrap();
        assert_eq!(twice, Image::filled(4, 4, 1.0 - 6.0));
        assert!(dual_update(&c, &Image::zeros(3, 4), &z).is_err());
    }

    #[test]
    fn relative_change_edge_cases() {
        let a = Image::zeros(2, 2);
        assert_eq!(relative_change(&a, &a), 0.0);
        assert_eq!(relative_change(&a, &Image::filled(2, 2, 1.0)), f64::INFINITY);
        let b = Image::filled(2, 2, 2.0);
        assert_eq!(relative_change(&b, &Image::filled(2, 2, 3.0)), 0.25);
    }

    #[test]
    fn single_iteration_counters() {
        let (sensor, img, meas) = tiny_problem(0.5);
        let cfg = SolverConfig {
            max_iters: 1,
            admm_inner: 3,
            rho: 1.0,
            tau: 0.5,
            lambda: 0.01,
            ..small_cfg()
        };
        let rec = reconstruct(&sensor, &meas, &cfg, Some(&img)).unwrap();
        assert_eq!(
            rec.counters,
            SolverCounters {
                groupings: 1,
                lowrank_passes: 1,
                x_updates: 3,
                z_updates: 3,
                dual_updates: 3,
            }
        );
        assert_eq!(rec.history.len(), 1);
        assert!(rec.history[0].psnr.is_some());
    }

    #[test]
    fn history_json_lines() {
        let (sensor, _, meas) = tiny_problem(0.5);
        let cfg = SolverConfig {
            max_iters: 3,
            upsilon: 0.0,
            ..small_cfg()
        };
        let rec = reconstruct(&sensor, &meas, &cfg, None).unwrap();
        let mut buf = Vec::new();
        rec.write_history(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        let first: IterationRecord = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first.iteration, 1);
        assert_eq!(first.psnr, None);
        assert_eq!(rec.stop, StopReason::MaxIterations);
    }

    #[test]
    fn phase_errors_name_iteration() {
        let (sensor, _, meas) = tiny_problem(0.5);
        let cfg = SolverConfig {
            geometry: PatchGeometry {
                patch_side: 4,
                stride: 4,
                group_size: 200,
                window: 8,
            },
            ..small_cfg()
        };
        let err = reconstruct(&sensor, &meas, &cfg, None).unwrap_err();
        assert!(matches!(
            err,
            SolverError::Phase {
                iteration: 1,
                phase: Phase::Grouping,
                ..
            }
        ));
        assert!(err.to_string().contains("iteration 1"));
    }
}
