//! Proximal kernels shared by every solver layer.
//!
//! Both shrinkage operators use the ramp `σ(x) = max(x, 0)`, which makes
//! them the exact proximal maps of `θ‖·‖₁` and `ρ‖·‖₂,₁`.

use serde::{Deserialize, Serialize};

use crate::linalg::{row_norms, thin_svd};
use crate::{Mat, MvcError, Result};

pub use crate::linalg::{orthogonality_error, random_orthonormal};

/// A nonnegative shrinkage threshold.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Threshold(f64);

impl Threshold {
    pub fn new(value: f64) -> Result<Self> {
        if value >= 0.0 {
            Ok(Threshold(value))
        } else {
            Err(MvcError::Config(format!(
                "threshold must be nonnegative, got {value}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Scalar soft-threshold `σ(a − θ) − σ(−a − θ)`, optionally clamped to the
/// nonnegative half-line.
#[inline]
pub fn soft_threshold_scalar(a: f64, theta: f64, nonneg: bool) -> f64 {
    let out = if a > theta {
        a - theta
    } else if a < -theta {
        a + theta
    } else {
        0.0
    };
    if nonneg {
        out.max(0.0)
    } else {
        out
    }
}

/// Derivative of [`soft_threshold_scalar`] with respect to its input,
/// taking 0 at the kinks.
#[inline]
pub(crate) fn soft_threshold_slope(a: f64, theta: f64, nonneg: bool) -> f64 {
    if a > theta || (!nonneg && a < -theta) {
        1.0
    } else {
        0.0
    }
}

/// Elementwise soft-thresholding.
pub fn soft_threshold(a: &Mat, theta: Threshold, nonneg: bool) -> Mat {
    a.map(|x| soft_threshold_scalar(x, theta.0, nonneg))
}

/// Row-wise ℓ2,1 shrinkage: every row `r` becomes
/// `max(‖r‖ − ρ, 0) / ‖r‖ · r`, zero rows stay zero.
pub fn row_shrink(a: &Mat, rho: Threshold) -> Mat {
    shrink_rows(a, rho.0)
}

pub(crate) fn shrink_rows(a: &Mat, rho: f64) -> Mat {
    let mut out = a.clone();
    shrink_rows_in_place(&mut out, rho);
    out
}

pub(crate) fn shrink_rows_in_place(a: &mut Mat, rho: f64) {
    let scales: Vec<f64> = row_norms(a)
        .into_iter()
        .map(|norm| row_shrink_scale(norm, rho))
        .collect();
    scale_rows(a, &scales);
}

/// Multiplies row `i` of `a` by `scales[i]`.
pub(crate) fn scale_rows(a: &mut Mat, scales: &[f64]) {
    for mut col in a.column_iter_mut() {
        for (x, s) in col.iter_mut().zip(scales) {
            *x *= s;
        }
    }
}

#[inline]
pub(crate) fn row_shrink_scale(norm: f64, rho: f64) -> f64 {
    if norm > rho {
        (norm - rho) / norm
    } else {
        0.0
    }
}

/// Solves `max_P tr(P Mᵀ)` subject to `P Pᵀ = I` for an `m × d` matrix
/// with `m ≤ d`: with the thin SVD `M = B Σ Cᵀ` the maximizer is `B Cᵀ`.
///
/// Rank-deficient inputs have many maximizers; the one returned is fixed by
/// the sign convention of the SVD (largest entry of each left singular
/// vector positive, singular values sorted descending).
pub fn procrustes(m: &Mat) -> Result<Mat> {
    if m.nrows() > m.ncols() {
        return Err(MvcError::Shape(format!(
            "procrustes needs rows <= cols, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let svd = thin_svd(m)?;
    Ok(&svd.u * &svd.vt)
}
