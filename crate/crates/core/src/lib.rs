//! Anchor-based multi-view clustering.
//!
//! The crate provides the alternating-optimization solver for the robust
//! anchor model `X_v ≈ H P_v + E_v`, its deep-unfolded network form with
//! learnable thresholds and mixing layers, an unsupervised trainer with a
//! hand-derived reverse pass, and the clustering/evaluation pieces needed
//! to run end-to-end experiments.
//!
//! Module map:
//!
//! * [`data`]: multi-view datasets, CSV directory format, synthetic
//!   generation, missing-view masks, normalization.
//! * [`prox`]: soft-thresholding, row-wise ℓ2,1 shrinkage, Procrustes.
//! * [`solver`]: the classic alternating solver and its objective.
//! * [`unfold`]: the unfolded network forward pass and parameters.
//! * [`train`]: reconstruction loss, backward pass, training loop and
//!   the finite-difference gradient check.
//! * [`cluster`]: k-means and the ACC / NMI / ARI metrics.
//! * [`experiment`]: experiment orchestration, reports, scaling benchmark.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod cluster;
pub mod data;
pub mod error;
pub mod experiment;
pub mod prox;
pub mod solver;
pub mod train;
pub mod unfold;

mod linalg;

pub use error::{MvcError, Result};

/// Dense matrix type used throughout the crate.
pub type Mat = nalgebra::DMatrix<f64>;
