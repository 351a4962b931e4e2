//! Compressive sensing reconstruction with a hybrid plug-and-play prior.
//!
//! An image is sensed block by block with a shared row-orthonormal Gaussian
//! projection. Reconstruction alternates a non-local low-rank step (weighted
//! nuclear norm shrinkage of block-matched patch groups) with an ADMM image
//! update whose prior step is delegated to a Gaussian denoiser, either the
//! built-in sliding-DCT denoiser or an external process.

pub mod denoise;
pub mod experiment;
pub mod image;
pub mod lowrank;
pub mod par;
pub mod patches;
pub mod presets;
pub mod sensing;
pub mod solver;
mod timing;

pub use crate::denoise::{DenoiseError, DenoiseRequest, Denoiser, DenoiserKind};
pub use crate::image::{load_image, psnr, save_image, Image, ImageError};
pub use crate::lowrank::{lowrank_pass, wnnm_shrink, LowRankStack, WnnmParams};
pub use crate::patches::{aggregate, Aggregation, GroupMatrix, PatchGeometry, PatchGroupIndex};
pub use crate::sensing::{BlockSensor, Measurements, SensingError};
pub use crate::solver::{reconstruct, Reconstruction, SolverConfig, SolverError, StopReason};
