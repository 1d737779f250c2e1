//! Alternating minimization of the robust anchor objective
//!
//! ```text
//! J = Σ_v ½‖X_v − H P_v − E_v‖²_F + α‖H‖₁ + β‖E_v‖₂,₁
//!     s.t. H ≥ 0, P_v P_vᵀ = I
//! ```
//!
//! with a proximal-gradient step for `H`, exact row shrinkage for `E_v`
//! and the Procrustes solution for `P_v`. With missing views every term
//! of view `v` only sums over the samples observed in `v`.

use serde::{Deserialize, Serialize};

use crate::cluster::{hungarian, kmeans, KMeansConfig};
use crate::data::MultiViewDataset;
use crate::linalg::row_norms;
use crate::prox::{procrustes, row_shrink, soft_threshold_scalar, Threshold};
use crate::{Mat, MvcError, Result};

/// Where the ℓ1 shrinkage sits relative to the cross-view average in the
/// `H` update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdPlacement {
    /// `H ← (1/V) Σ_v S_θ(A_v)`: shrink every view's candidate, then average.
    PerView,
    /// `H ← S_θ((1/V) Σ_v A_v)`: the exact proximal step of the H-subproblem.
    AfterAverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub alpha: f64,
    pub beta: f64,
    pub anchors: usize,
    pub max_iters: usize,
    /// Relative objective change below which iteration stops.
    pub tol: f64,
    pub lipschitz_p: f64,
    /// One constant per view; empty means 1 for every view.
    pub lipschitz_q: Vec<f64>,
    pub seed: u64,
    pub nonneg_h: bool,
    pub placement: ThresholdPlacement,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            alpha: 1e-3,
            beta: 1e-3,
            anchors: 2,
            max_iters: 100,
            tol: 1e-8,
            lipschitz_p: 1.0,
            lipschitz_q: Vec::new(),
            seed: 0,
            nonneg_h: true,
            placement: ThresholdPlacement::AfterAverage,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self, n_views: usize) -> Result<()> {
        let bad = |m: &str| Err(MvcError::Config(m.to_string()));
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return bad("alpha and beta must be nonnegative");
        }
        if self.anchors == 0 {
            return bad("anchor count must be >= 1");
        }
        if !(self.tol > 0.0) {
            return bad("tol must be positive");
        }
        if !(self.lipschitz_p > 0.0) {
            return bad("lipschitz_p must be positive");
        }
        if !self.lipschitz_q.is_empty()
            && (self.lipschitz_q.len() != n_views || self.lipschitz_q.iter().any(|&l| !(l > 0.0)))
        {
            return bad("lipschitz_q needs one positive value per view");
        }
        Ok(())
    }

    pub fn lipschitz_q(&self, view: usize) -> f64 {
        self.lipschitz_q.get(view).copied().unwrap_or(1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    /// `n × m` cluster representation.
    pub h: Mat,
    /// Per-view `n × d_v` noise estimates.
    pub e: Vec<Mat>,
    /// Per-view `m × d_v` anchor indicators with orthonormal rows.
    pub p: Vec<Mat>,
    pub objective_history: Vec<f64>,
}

impl SolverState {
    /// `H = 0`, `E = 0` and the given anchors.
    pub fn initial(ds: &MultiViewDataset, p: Vec<Mat>) -> Result<Self> {
        check_anchor_shapes(ds, &p)?;
        let m = p[0].nrows();
        Ok(SolverState {
            h: Mat::zeros(ds.n_samples(), m),
            e: ds.dims().into_iter().map(|d| Mat::zeros(ds.n_samples(), d)).collect(),
            p,
            objective_history: Vec::new(),
        })
    }
}

pub(crate) fn check_anchor_shapes(ds: &MultiViewDataset, p: &[Mat]) -> Result<()> {
    if p.len() != ds.n_views() {
        return Err(MvcError::Shape(format!(
            "{} anchor matrices for {} views",
            p.len(),
            ds.n_views()
        )));
    }
    let m = p[0].nrows();
    for (v, (pv, d)) in p.iter().zip(ds.dims()).enumerate() {
        if pv.nrows() != m || pv.ncols() != d {
            return Err(MvcError::Shape(format!(
                "anchor matrix {v} is {}x{}, expected {m}x{d}",
                pv.nrows(),
                pv.ncols()
            )));
        }
    }
    Ok(())
}

/// k-means centroids of every view (over its observed rows), projected onto
/// the row-orthonormal set with [`procrustes`].
///
/// Centroid order is made consistent across views: the clusters of view
/// `v > 0` are matched to those of view 0 by maximum co-assignment over the
/// samples both views observe, so anchor `k` means the same thing in every
/// view.
pub fn init_anchors(ds: &MultiViewDataset, m: usize, seed: u64) -> Result<Vec<Mat>> {
    let mut anchors = Vec::with_capacity(ds.n_views());
    let mut reference: Option<Vec<Option<usize>>> = None;
    for v in 0..ds.n_views() {
        let x = ds.view(v);
        if m > x.ncols() {
            return Err(MvcError::Config(format!(
                "{m} anchors exceed dimension {} of view {v}",
                x.ncols()
            )));
        }
        let rows = ds.observed_rows(v);
        if m > rows.len() {
            return Err(MvcError::Config(format!(
                "{m} anchors exceed the {} observed rows of view {v}",
                rows.len()
            )));
        }
        let points = x.select_rows(&rows);
        let cfg = KMeansConfig::new(m, seed.wrapping_add(1_000_003 * v as u64));
        let fit = kmeans(&points, &cfg)?;
        let mut labels = vec![None; ds.n_samples()];
        for (&i, &a) in rows.iter().zip(&fit.assignments) {
            labels[i] = Some(a);
        }
        let centroids = match &reference {
            None => {
                reference = Some(labels);
                fit.centroids
            }
            Some(base) => {
                let mut overlap = vec![vec![0.0; m]; m];
                for (a, b) in base.iter().zip(&labels) {
                    if let (Some(a), Some(b)) = (a, b) {
                        overlap[*a][*b] += 1.0;
                    }
                }
                let cost: Vec<Vec<f64>> = overlap.iter().map(|r| r.iter().map(|c| -c).collect()).collect();
                let matching = hungarian(&cost);
                Mat::from_fn(m, x.ncols(), |k, j| fit.centroids[(matching[k], j)])
            }
        };
        anchors.push(procrustes(&centroids)?);
    }
    Ok(anchors)
}

/// Value of the objective at `state`.
pub fn objective(ds: &MultiViewDataset, state: &SolverState, cfg: &SolverConfig) -> Result<f64> {
    check_anchor_shapes(ds, &state.p)?;
    let n = ds.n_samples();
    if state.h.nrows() != n || state.h.ncols() != state.p[0].nrows() || state.e.len() != ds.n_views()
    {
        return Err(MvcError::Shape("state does not match the dataset".into()));
    }
    let h_row_l1: Vec<f64> = state.h.row_iter().map(|r| r.iter().map(|x| x.abs()).sum()).collect();
    let mut total = 0.0;
    for v in 0..ds.n_views() {
        if state.e[v].shape() != ds.view(v).shape() {
            return Err(MvcError::Shape(format!("noise matrix {v} has the wrong shape")));
        }
        let mut residual = ds.view(v) - &state.h * &state.p[v] - &state.e[v];
        ds.mask_rows(v, &mut residual);
        let mut e = state.e[v].clone();
        ds.mask_rows(v, &mut e);
        let l1: f64 = (0..n).filter(|&i| ds.is_observed(v, i)).map(|i| h_row_l1[i]).sum();
        let l21: f64 = row_norms(&e).iter().sum();
        total += 0.5 * residual.norm_squared() + cfg.alpha * l1 + cfg.beta * l21;
    }
    Ok(total)
}

/// Merges per-view `H` candidates into the next `H`, averaging every sample
/// over the views it is observed in.
pub(crate) fn combine_views(
    ds: &MultiViewDataset,
    candidates: &[Mat],
    theta: f64,
    nonneg: bool,
    placement: ThresholdPlacement,
) -> Mat {
    let (n, m) = candidates[0].shape();
    let counts = ds.observed_counts();
    let mut out = Mat::zeros(n, m);
    for (v, a) in candidates.iter().enumerate() {
        for j in 0..m {
            for i in 0..n {
                if ds.is_observed(v, i) {
                    out[(i, j)] += match placement {
                        ThresholdPlacement::PerView => soft_threshold_scalar(a[(i, j)], theta, nonneg),
                        ThresholdPlacement::AfterAverage => a[(i, j)],
                    };
                }
            }
        }
    }
    for (i, &c) in counts.iter().enumerate() {
        let inv = 1.0 / c as f64;
        for j in 0..m {
            out[(i, j)] *= inv;
            if placement == ThresholdPlacement::AfterAverage {
                out[(i, j)] = soft_threshold_scalar(out[(i, j)], theta, nonneg);
            }
        }
    }
    out
}

/// One proximal-gradient step on `H` with step `1/L_p`.
pub fn update_h(state: &SolverState, ds: &MultiViewDataset, cfg: &SolverConfig) -> Mat {
    let lp = cfg.lipschitz_p;
    let m = state.h.ncols();
    let candidates: Vec<Mat> = (0..ds.n_views())
        .map(|v| {
            let p = &state.p[v];
            let keep = Mat::identity(m, m) - (p * p.transpose()) / lp;
            &state.h * keep + ((ds.view(v) - &state.e[v]) * p.transpose()) / lp
        })
        .collect();
    combine_views(ds, &candidates, cfg.alpha / lp, cfg.nonneg_h, cfg.placement)
}

/// Row shrinkage of each view's residual with threshold `β / L_q`.
pub fn update_e(state: &SolverState, ds: &MultiViewDataset, cfg: &SolverConfig) -> Vec<Mat> {
    (0..ds.n_views())
        .map(|v| {
            let rho = Threshold::new(cfg.beta / cfg.lipschitz_q(v)).expect("validated config");
            let mut e = row_shrink(&(ds.view(v) - &state.h * &state.p[v]), rho);
            ds.mask_rows(v, &mut e);
            e
        })
        .collect()
}

/// Procrustes solution `P_v = B Cᵀ` for `Hᵀ(X_v − E_v)` over observed rows.
pub fn update_p(state: &SolverState, ds: &MultiViewDataset) -> Result<Vec<Mat>> {
    anchors_for(&state.h, &state.e, ds)
}

pub(crate) fn anchors_for(h: &Mat, e: &[Mat], ds: &MultiViewDataset) -> Result<Vec<Mat>> {
    (0..ds.n_views())
        .map(|v| {
            let mut target = ds.view(v) - &e[v];
            ds.mask_rows(v, &mut target);
            procrustes(&(h.transpose() * target))
        })
        .collect()
}

/// One full `H → E → P` sweep; appends the new objective value.
pub fn sweep(state: &mut SolverState, ds: &MultiViewDataset, cfg: &SolverConfig) -> Result<f64> {
    state.h = update_h(state, ds, cfg);
    state.e = update_e(state, ds, cfg);
    state.p = update_p(state, ds)?;
    let j = objective(ds, state, cfg)?;
    if !j.is_finite() {
        return Err(MvcError::Numerical("objective became non-finite".into()));
    }
    state.objective_history.push(j);
    Ok(j)
}

/// Initializes anchors with k-means and iterates to convergence.
pub fn solve(ds: &MultiViewDataset, cfg: &SolverConfig) -> Result<SolverState> {
    cfg.validate(ds.n_views())?;
    let anchors = init_anchors(ds, cfg.anchors, cfg.seed)?;
    solve_from(ds, cfg, anchors)
}

/// Same as [`solve`] with caller-supplied initial anchors.
pub fn solve_from(ds: &MultiViewDataset, cfg: &SolverConfig, anchors: Vec<Mat>) -> Result<SolverState> {
    cfg.validate(ds.n_views())?;
    let mut state = SolverState::initial(ds, anchors)?;
    let j0 = objective(ds, &state, cfg)?;
    state.objective_history.push(j0);
    for _ in 0..cfg.max_iters {
        let prev = *state.objective_history.last().expect("non-empty");
        let next = sweep(&mut state, ds, cfg)?;
        if (prev - next).abs() <= cfg.tol * prev.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(state)
}
