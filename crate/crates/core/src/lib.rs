//! Knockoff inference on summary statistics with family-wise error rate control.
//!
//! The pipeline runs from a feature correlation matrix and a vector of
//! marginal Z-scores to a rejection set:
//!
//! 1. [`dsolve`] picks the diagonal (or group block) matrix `D` that couples
//!    originals to their knockoffs.
//! 2. [`sampler`] draws `M` knockoff copies of the Z-scores from the Gaussian
//!    conditional model, factoring only a `p × p` matrix.
//! 3. [`stats`] reduces the `M + 1` scores per feature (or group) to a winner
//!    index `kappa` and a margin `tau`.
//! 4. [`filter`] walks features by decreasing `tau` and stops at the `v`-th
//!    knockoff win, with `v` fixed by a negative-binomial tail bound.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the crate root fix it to `f64`, which is what the CLI and simulation
//! harness use.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod corr;
pub mod dsolve;
pub mod error;
pub mod filter;
pub mod groups;
pub mod io;
pub mod sampler;
pub mod scalar;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix = corr::Matrix<f64>;
pub type CorrelationMatrix = corr::CorrelationMatrix<f64>;
pub type CholeskyFactor = corr::CholeskyFactor<f64>;
pub type SVector = dsolve::SVector<f64>;
pub type GroupD = dsolve::GroupD<f64>;
pub type KnockoffModel = sampler::KnockoffModel<f64>;
pub type KnockoffScores = sampler::KnockoffScores<f64>;
pub type KnockoffStats = stats::KnockoffStats<f64>;

pub type Matrix32 = corr::Matrix<f32>;
pub type CorrelationMatrix32 = corr::CorrelationMatrix<f32>;
pub type SVector32 = dsolve::SVector<f32>;
pub type KnockoffModel32 = sampler::KnockoffModel<f32>;
pub type KnockoffScores32 = sampler::KnockoffScores<f32>;
pub type KnockoffStats32 = stats::KnockoffStats<f32>;
