//! Weighted nuclear norm proximal step on patch groups.
//!
//! For a group `X` with singular values `s_j`, the weights follow the usual
//! WNNM rule `w_j = c * sqrt(m) / (s_hat_j + eps)` where
//! `s_hat_j = sqrt(max(s_j^2 - m * sigma_w^2, 0))` estimates the clean
//! singular value. Shrinkage is a single weighted soft-threshold
//! `max(s_j - theta * w_j, 0)`; because the weights are non-decreasing in `j`
//! this is the exact minimizer of the frozen-weight problem.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::Image;
use crate::par;
use crate::patches::{aggregate_with, Aggregation, AggregationMode, GroupMatrix, PatchError, PatchGroupIndex};

#[derive(Debug, Error)]
pub enum LowRankError {
    #[error("non-finite entry in matrix")]
    NonFinite,
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("SVD did not converge")]
    NoConvergence,
    #[error(transparent)]
    Patch(#[from] PatchError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WnnmParams {
    /// Effective threshold `lambda / mu`.
    pub theta: f64,
    pub c_weight: f64,
    pub eps: f64,
    /// Noise proxy `sigma_w` used to estimate clean singular values.
    pub noise_floor: f64,
}

impl Default for WnnmParams {
    fn default() -> Self {
        Self {
            theta: 0.0,
            c_weight: 2.0 * std::f64::consts::SQRT_2,
            eps: 1e-16,
            noise_floor: 0.0,
        }
    }
}

impl WnnmParams {
    pub fn validate(&self) -> Result<(), LowRankError> {
        if !(self.theta >= 0.0) || !self.theta.is_finite() {
            return Err(LowRankError::Params(format!("theta {}", self.theta)));
        }
        if !(self.eps > 0.0) {
            return Err(LowRankError::Params(format!("eps {}", self.eps)));
        }
        if !(self.noise_floor >= 0.0) || !(self.c_weight >= 0.0) {
            return Err(LowRankError::Params("negative noise floor or weight constant".into()));
        }
        Ok(())
    }

    /// Weights for the given singular values of a group with `cols` columns.
    pub fn weights(&self, singular: &[f64], cols: usize) -> Vec<f64> {
        let m = cols as f64;
        let floor = m * self.noise_floor * self.noise_floor;
        singular
            .iter()
            .map(|&s| {
                let clean = (s * s - floor).max(0.0).sqrt();
                self.c_weight * m.sqrt() / (clean + self.eps)
            })
            .collect()
    }
}

/// Thin SVD with singular values sorted in descending order.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub singular: Vec<f64>,
    pub v: DMatrix<f64>,
}

impl Svd {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.reconstruct_with(&self.singular)
    }

    /// `U diag(values) V^T`, skipping zero values.
    pub fn reconstruct_with(&self, values: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.u.nrows(), self.v.nrows());
        for (j, &s) in values.iter().enumerate() {
            if s != 0.0 {
                out += (self.u.column(j) * s) * self.v.column(j).transpose();
            }
        }
        out
    }
}

/// nalgebra's Golub-Kahan SVD returns wrong factors for some rank-deficient
/// inputs, so the decomposition goes through faer.
pub fn svd(matrix: &DMatrix<f64>) -> Result<Svd, LowRankError> {
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(LowRankError::NonFinite);
    }
    let (rows, cols) = matrix.shape();
    let k = rows.min(cols);
    if k == 0 {
        return Ok(Svd { u: DMatrix::zeros(rows, 0), singular: Vec::new(), v: DMatrix::zeros(cols, 0) });
    }
    let decomposition = faer::MatRef::from_column_major_slice(matrix.as_slice(), rows, cols)
        .thin_svd()
        .map_err(|_| LowRankError::NoConvergence)?;
    let s = decomposition.S().column_vector();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let singular = order.iter().map(|&j| s[j].max(0.0)).collect();
    let (fu, fv) = (decomposition.U(), decomposition.V());
    let u = DMatrix::from_fn(rows, k, |i, j| fu[(i, order[j])]);
    let v = DMatrix::from_fn(cols, k, |i, j| fv[(i, order[j])]);
    Ok(Svd { u, singular, v })
}

/// Shrunk singular values for the given spectrum.
pub fn shrink_spectrum(singular: &[f64], cols: usize, params: &WnnmParams) -> Vec<f64> {
    let weights = params.weights(singular, cols);
    singular
        .iter()
        .zip(weights)
        .map(|(&s, w)| (s - params.theta * w).max(0.0))
        .collect()
}

/// Weighted singular value thresholding of one group.
pub fn wnnm_shrink(group: &GroupMatrix, params: &WnnmParams) -> Result<GroupMatrix, LowRankError> {
    params.validate()?;
    if params.theta == 0.0 {
        if group.0.iter().any(|v| !v.is_finite()) {
            return Err(LowRankError::NonFinite);
        }
        return Ok(group.clone());
    }
    let decomposition = svd(&group.0)?;
    let shrunk = shrink_spectrum(&decomposition.singular, group.cols(), params);
    Ok(GroupMatrix(decomposition.reconstruct_with(&shrunk)))
}

/// Low-rank estimates `L_i` for every group plus their aggregation.
#[derive(Debug, Clone)]
pub struct LowRankStack {
    pub groups: Vec<GroupMatrix>,
    pub aggregation: Aggregation,
}

pub fn lowrank_pass(img: &Image, index: &PatchGroupIndex, params: &WnnmParams) -> Result<LowRankStack, LowRankError> {
    lowrank_pass_with(img, index, params, true, AggregationMode::Sequential)
}

pub fn lowrank_pass_with(
    img: &Image,
    index: &PatchGroupIndex,
    params: &WnnmParams,
    parallel: bool,
    mode: AggregationMode,
) -> Result<LowRankStack, LowRankError> {
    params.validate()?;
    let groups = par::map_indexed(index.len(), parallel, |i| {
        let group = index.extract(img, i)?;
        wnnm_shrink(&group, params)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let aggregation = aggregate_with(&groups, index, img.dims(), mode)?;
    Ok(LowRankStack { groups, aggregation })
}
