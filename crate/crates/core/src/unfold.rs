//! The unfolded network: `L` stages of RepresentModule → NoiseModule →
//! AnchorModule, each a parameterized copy of one alternating sweep.
//!
//! ```text
//! H⁽ˡ⁺¹⁾   = (1/V) Σ_v S_θ⁽ˡ⁾(H⁽ˡ⁾ R + (X_v − E_v⁽ˡ⁾) P_v⁽ˡ⁾ᵀ U)
//! E_v⁽ˡ⁺¹⁾ = D_ρ_v⁽ˡ⁾(X_v − H⁽ˡ⁺¹⁾ P_v⁽ˡ⁾)
//! P_v⁽ˡ⁺¹⁾ = procrustes(H⁽ˡ⁺¹⁾ᵀ (X_v − E_v⁽ˡ⁺¹⁾))
//! ```
//!
//! `R` and `U` are shared by all stages; `θ` is per stage and `ρ` per
//! stage and view.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::MultiViewDataset;
use crate::prox::shrink_rows_in_place;
use crate::solver::{anchors_for, check_anchor_shapes, combine_views, ThresholdPlacement};
use crate::{Mat, MvcError, Result};

/// Which modules run in every stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// RepresentModule only; anchors stay at their initial value.
    #[serde(alias = "RMvC")]
    Rmvc,
    /// RepresentModule + AnchorModule; no noise estimate.
    #[serde(alias = "AMvC")]
    Amvc,
    /// All three modules.
    #[serde(alias = "LargeMvC")]
    Largemvc,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Rmvc, Variant::Amvc, Variant::Largemvc];

    pub fn has_noise_module(self) -> bool {
        self == Variant::Largemvc
    }

    pub fn has_anchor_module(self) -> bool {
        self != Variant::Rmvc
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Rmvc => "rmvc",
            Variant::Amvc => "amvc",
            Variant::Largemvc => "largemvc",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = MvcError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rmvc" => Ok(Variant::Rmvc),
            "amvc" => Ok(Variant::Amvc),
            "largemvc" => Ok(Variant::Largemvc),
            other => Err(MvcError::Config(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnfoldConfig {
    pub layers: usize,
    pub anchors: usize,
    pub variant: Variant,
    pub nonneg_h: bool,
    /// When false the anchors stay at `P_init` through all stages.
    pub recompute_anchors: bool,
    pub placement: ThresholdPlacement,
    /// Starting value of every ℓ1 threshold θ⁽ˡ⁾.
    pub theta_init: f64,
    /// Starting value of the row-shrinkage thresholds ρ⁽ˡ⁾_v.
    pub rho_init: RhoInit,
}

/// How the row-shrinkage thresholds start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoInit {
    /// The same value for every layer and view.
    Fixed(f64),
    /// This fraction of the median observed row norm of `X_v`, so that
    /// typical rows survive the shrinkage whatever the data scale.
    RowNormFraction(f64),
}

impl RhoInit {
    fn value(self) -> f64 {
        match self {
            RhoInit::Fixed(x) | RhoInit::RowNormFraction(x) => x,
        }
    }
}

fn median_row_norm(ds: &MultiViewDataset, v: usize) -> f64 {
    let x = ds.view(v);
    let mut norms: Vec<f64> = ds.observed_rows(v).iter().map(|&i| x.row(i).norm()).collect();
    if norms.is_empty() {
        return 0.0;
    }
    norms.sort_by(f64::total_cmp);
    let k = norms.len();
    if k % 2 == 1 {
        norms[k / 2]
    } else {
        0.5 * (norms[k / 2 - 1] + norms[k / 2])
    }
}

impl Default for UnfoldConfig {
    fn default() -> Self {
        UnfoldConfig {
            layers: 2,
            anchors: 2,
            variant: Variant::Largemvc,
            nonneg_h: true,
            recompute_anchors: true,
            placement: ThresholdPlacement::PerView,
            theta_init: 1e-2,
            rho_init: RhoInit::RowNormFraction(1.0),
        }
    }
}

impl UnfoldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(MvcError::Config("the network needs at least one layer".into()));
        }
        if self.anchors == 0 {
            return Err(MvcError::Config("anchor count must be >= 1".into()));
        }
        for (name, x) in [("theta_init", self.theta_init), ("rho_init", self.rho_init.value())] {
            if !(x >= 0.0 && x.is_finite()) {
                return Err(MvcError::Config(format!("{name} must be finite and >= 0, got {x}")));
            }
        }
        Ok(())
    }

    fn anchors_move(&self) -> bool {
        self.recompute_anchors && self.variant.has_anchor_module()
    }
}

/// Learnable parameters. The same layout doubles as the gradient type
/// returned by [`crate::train::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct UnfoldParams {
    /// `m × m`, multiplies the previous representation.
    pub r: Mat,
    /// `m × m`, multiplies the anchor projection of the data.
    pub u: Mat,
    /// ℓ1 threshold per layer.
    pub theta: Vec<f64>,
    /// Row-shrinkage threshold per layer and view.
    pub rho: Vec<Vec<f64>>,
}

impl UnfoldParams {
    /// `R = 0`, `U = I`: the first stage starts as a plain anchor
    /// projection. Thresholds follow `theta_init` and `rho_init`.
    pub fn init(cfg: &UnfoldConfig, ds: &MultiViewDataset) -> Self {
        let m = cfg.anchors;
        let rho: Vec<f64> = (0..ds.n_views())
            .map(|v| match cfg.rho_init {
                RhoInit::Fixed(x) => x,
                RhoInit::RowNormFraction(f) => f * median_row_norm(ds, v),
            })
            .collect();
        UnfoldParams {
            r: Mat::zeros(m, m),
            u: Mat::identity(m, m),
            theta: vec![cfg.theta_init; cfg.layers],
            rho: vec![rho; cfg.layers],
        }
    }

    /// Parameters under which every stage performs exactly one sweep of
    /// the classic solver: `R = I − PPᵀ/L_p`, `U = I/L_p`, `θ = α/L_p`,
    /// `ρ_v = β/L_q_v`. Since `P Pᵀ = I`, `R` is `(1 − 1/L_p) I`.
    pub fn classic_equivalent(
        cfg: &UnfoldConfig,
        n_views: usize,
        alpha: f64,
        beta: f64,
        lipschitz_p: f64,
        lipschitz_q: &[f64],
    ) -> Self {
        let m = cfg.anchors;
        let lq = |v: usize| lipschitz_q.get(v).copied().unwrap_or(1.0);
        UnfoldParams {
            r: Mat::identity(m, m) * (1.0 - 1.0 / lipschitz_p),
            u: Mat::identity(m, m) / lipschitz_p,
            theta: vec![alpha / lipschitz_p; cfg.layers],
            rho: (0..cfg.layers)
                .map(|_| (0..n_views).map(|v| beta / lq(v)).collect())
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        UnfoldParams {
            r: Mat::zeros(self.r.nrows(), self.r.ncols()),
            u: Mat::zeros(self.u.nrows(), self.u.ncols()),
            theta: vec![0.0; self.theta.len()],
            rho: self.rho.iter().map(|r| vec![0.0; r.len()]).collect(),
        }
    }

    pub fn validate(&self, cfg: &UnfoldConfig, n_views: usize) -> Result<()> {
        let m = cfg.anchors;
        if self.r.shape() != (m, m) || self.u.shape() != (m, m) {
            return Err(MvcError::Shape(format!("R and U must be {m}x{m}")));
        }
        if self.theta.len() != cfg.layers || self.rho.len() != cfg.layers {
            return Err(MvcError::Shape(format!(
                "expected thresholds for {} layers",
                cfg.layers
            )));
        }
        if self.rho.iter().any(|r| r.len() != n_views) {
            return Err(MvcError::Shape(format!("expected {n_views} rho values per layer")));
        }
        if self.theta.iter().chain(self.rho.iter().flatten()).any(|&t| !(t >= 0.0)) {
            return Err(MvcError::Config("thresholds must be nonnegative".into()));
        }
        Ok(())
    }

    /// Clamps every threshold at zero.
    pub fn clamp_thresholds(&mut self) {
        for t in self.theta.iter_mut().chain(self.rho.iter_mut().flatten()) {
            *t = t.max(0.0);
        }
    }

    /// Euclidean norm over all blocks.
    pub fn norm(&self) -> f64 {
        let sq = self.r.norm_squared()
            + self.u.norm_squared()
            + self.theta.iter().map(|x| x * x).sum::<f64>()
            + self.rho.iter().flatten().map(|x| x * x).sum::<f64>();
        sq.sqrt()
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &UnfoldParams, scale: f64) {
        self.r += &other.r * scale;
        self.u += &other.u * scale;
        for (a, b) in self.theta.iter_mut().zip(&other.theta) {
            *a += scale * b;
        }
        for (a, b) in self.rho.iter_mut().flatten().zip(other.rho.iter().flatten()) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        let z = self.zeros_like();
        let copy = std::mem::replace(self, z);
        self.add_scaled(&copy, factor);
    }
}

/// Intermediate quantities of one forward pass; index `l` holds the state
/// entering stage `l` (index 0 is the initial state).
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub h: Vec<Mat>,
    pub e: Vec<Vec<Mat>>,
    pub p: Vec<Vec<Mat>>,
}

impl ForwardTrace {
    pub fn layers(&self) -> usize {
        self.h.len() - 1
    }

    pub fn final_h(&self) -> &Mat {
        self.h.last().expect("trace has the initial stage")
    }

    pub fn final_p(&self) -> &[Mat] {
        self.p.last().expect("trace has the initial stage")
    }
}

/// Per-view anchor projections `(X_v − E_v) P_vᵀ`; `E` is skipped when
/// the variant has no noise module (it is zero then).
pub(crate) fn view_projections(e_prev: &[Mat], p_prev: &[Mat], ds: &MultiViewDataset, cfg: &UnfoldConfig) -> Vec<Mat> {
    (0..ds.n_views())
        .map(|v| {
            let pt = p_prev[v].transpose();
            let mut y = ds.view(v) * &pt;
            if cfg.variant.has_noise_module() {
                y.gemm(-1.0, &e_prev[v], &pt, 1.0);
            }
            y
        })
        .collect()
}

/// Per-view candidates `H R + Y_v U` of the representation step, `Y_v`
/// being the projections from [`view_projections`].
pub(crate) fn represent_candidates(h_prev: &Mat, projections: &[Mat], params: &UnfoldParams) -> Vec<Mat> {
    let hr = h_prev * &params.r;
    projections
        .iter()
        .map(|y| {
            let mut c = hr.clone();
            c.gemm(1.0, y, &params.u, 1.0);
            c
        })
        .collect()
}

fn check_step_shapes(h: &Mat, p: &[Mat], ds: &MultiViewDataset, params: &UnfoldParams, layer: usize) -> Result<()> {
    check_anchor_shapes(ds, p)?;
    let m = p[0].nrows();
    if h.shape() != (ds.n_samples(), m) || params.r.nrows() != m {
        return Err(MvcError::Shape(format!(
            "representation is {}x{}, expected {}x{m}",
            h.nrows(),
            h.ncols(),
            ds.n_samples()
        )));
    }
    if layer >= params.theta.len() {
        return Err(MvcError::Shape(format!("layer {layer} out of range")));
    }
    Ok(())
}

/// RepresentModule.
pub fn represent_step(
    h_prev: &Mat,
    e_prev: &[Mat],
    p_prev: &[Mat],
    params: &UnfoldParams,
    layer: usize,
    ds: &MultiViewDataset,
    cfg: &UnfoldConfig,
) -> Result<Mat> {
    check_step_shapes(h_prev, p_prev, ds, params, layer)?;
    let projections = view_projections(e_prev, p_prev, ds, cfg);
    let candidates = represent_candidates(h_prev, &projections, params);
    Ok(combine_views(ds, &candidates, params.theta[layer], cfg.nonneg_h, cfg.placement))
}

/// NoiseModule. Returns zeros for variants without it.
pub fn noise_step(
    h_next: &Mat,
    p_prev: &[Mat],
    params: &UnfoldParams,
    layer: usize,
    ds: &MultiViewDataset,
    cfg: &UnfoldConfig,
) -> Result<Vec<Mat>> {
    check_step_shapes(h_next, p_prev, ds, params, layer)?;
    Ok(noise_estimates(h_next, p_prev, params, layer, ds, cfg))
}

fn noise_estimates(
    h_next: &Mat,
    p_prev: &[Mat],
    params: &UnfoldParams,
    layer: usize,
    ds: &MultiViewDataset,
    cfg: &UnfoldConfig,
) -> Vec<Mat> {
    (0..ds.n_views())
        .map(|v| {
            if !cfg.variant.has_noise_module() {
                return Mat::zeros(ds.n_samples(), ds.view(v).ncols());
            }
            let mut e = ds.view(v).clone();
            e.gemm(-1.0, h_next, &p_prev[v], 1.0);
            shrink_rows_in_place(&mut e, params.rho[layer][v]);
            ds.mask_rows(v, &mut e);
            e
        })
        .collect()
}

/// AnchorModule. Passes `p_prev` through for variants without it or when
/// anchor recomputation is off.
pub fn anchor_step(
    h_next: &Mat,
    e_next: &[Mat],
    p_prev: &[Mat],
    ds: &MultiViewDataset,
    cfg: &UnfoldConfig,
) -> Result<Vec<Mat>> {
    if cfg.anchors_move() {
        anchors_for(h_next, e_next, ds)
    } else {
        Ok(p_prev.to_vec())
    }
}

fn start_trace(ds: &MultiViewDataset, m: usize, p0: Vec<Mat>) -> ForwardTrace {
    let n = ds.n_samples();
    ForwardTrace {
        h: vec![Mat::zeros(n, m)],
        e: vec![ds.dims().into_iter().map(|d| Mat::zeros(n, d)).collect()],
        p: vec![p0],
    }
}

/// Runs all stages from `H = 0`, `E = 0`, `P = p_init`.
pub fn forward(
    ds: &MultiViewDataset,
    params: &UnfoldParams,
    p_init: &[Mat],
    cfg: &UnfoldConfig,
) -> Result<ForwardTrace> {
    cfg.validate()?;
    params.validate(cfg, ds.n_views())?;
    check_anchor_shapes(ds, p_init)?;
    let mut trace = start_trace(ds, cfg.anchors, p_init.to_vec());
    for layer in 0..cfg.layers {
        let (h, e, p) = (&trace.h[layer], &trace.e[layer], &trace.p[layer]);
        let h_next = represent_step(h, e, p, params, layer, ds, cfg)?;
        let e_next = noise_step(&h_next, p, params, layer, ds, cfg)?;
        let p_next = anchor_step(&h_next, &e_next, p, ds, cfg)?;
        trace.h.push(h_next);
        trace.e.push(e_next);
        trace.p.push(p_next);
    }
    Ok(trace)
}

/// Forward pass with every stage's anchors fixed to `anchors[l]`
/// (`layers + 1` entries), as used by the gradient convention that treats
/// the AnchorModule output as a constant.
pub fn forward_frozen(
    ds: &MultiViewDataset,
    params: &UnfoldParams,
    anchors: &[Vec<Mat>],
    cfg: &UnfoldConfig,
) -> Result<ForwardTrace> {
    cfg.validate()?;
    if anchors.len() != cfg.layers + 1 {
        return Err(MvcError::Shape(format!(
            "{} anchor stages for {} layers",
            anchors.len(),
            cfg.layers
        )));
    }
    let mut trace = start_trace(ds, cfg.anchors, anchors[0].clone());
    for layer in 0..cfg.layers {
        let (h, e, p) = (&trace.h[layer], &trace.e[layer], &anchors[layer]);
        check_step_shapes(h, p, ds, params, layer)?;
        let projections = view_projections(e, p, ds, cfg);
        let candidates = represent_candidates(h, &projections, params);
        let h_next = combine_views(ds, &candidates, params.theta[layer], cfg.nonneg_h, cfg.placement);
        let e_next = noise_estimates(&h_next, p, params, layer, ds, cfg);
        trace.h.push(h_next);
        trace.e.push(e_next);
        trace.p.push(anchors[layer + 1].clone());
    }
    Ok(trace)
}

/// On-disk parameter checkpoint (JSON, matrices as arrays of rows).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub layers: usize,
    pub anchors: usize,
    pub views: usize,
    pub variant: Variant,
    pub r: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub theta: Vec<f64>,
    pub rho: Vec<Vec<f64>>,
    /// Initial anchors, one `m × d_v` matrix per view.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_init: Option<Vec<Vec<Vec<f64>>>>,
}

pub const CHECKPOINT_FORMAT: &str = "largemvc-params";

fn to_rows(a: &Mat) -> Vec<Vec<f64>> {
    a.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], what: &str) -> Result<Mat> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(MvcError::Shape(format!("{what}: ragged rows")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Mat::from_row_slice(rows.len(), cols, &flat))
}

impl Checkpoint {
    pub fn new(params: &UnfoldParams, cfg: &UnfoldConfig, p_init: Option<&[Mat]>) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: 1,
            layers: cfg.layers,
            anchors: cfg.anchors,
            views: params.rho.first().map_or(0, Vec::len),
            variant: cfg.variant,
            r: to_rows(&params.r),
            u: to_rows(&params.u),
            theta: params.theta.clone(),
            rho: params.rho.clone(),
            p_init: p_init.map(|p| p.iter().map(to_rows).collect()),
        }
    }

    pub fn params(&self) -> Result<UnfoldParams> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(MvcError::Config(format!("unknown checkpoint format {:?}", self.format)));
        }
        let params = UnfoldParams {
            r: from_rows(&self.r, "R")?,
            u: from_rows(&self.u, "U")?,
            theta: self.theta.clone(),
            rho: self.rho.clone(),
        };
        let cfg = UnfoldConfig {
            layers: self.layers,
            anchors: self.anchors,
            variant: self.variant,
            ..Default::default()
        };
        params.validate(&cfg, self.views)?;
        Ok(params)
    }

    pub fn anchors(&self) -> Result<Option<Vec<Mat>>> {
        self.p_init
            .as_ref()
            .map(|ps| ps.iter().map(|p| from_rows(p, "P")).collect())
            .transpose()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        fs::write(path, text).map_err(|e| MvcError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| MvcError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| MvcError::parse(path, e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gaussian;
    use crate::prox::{orthogonality_error, random_orthonormal};
    use crate::solver::{update_e, update_h, SolverConfig, SolverState};
    use nalgebra::dmatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn instance(seed: u64, n: usize, dims: &[usize], m: usize) -> (MultiViewDataset, Vec<Mat>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let views = dims.iter().map(|&d| gaussian(n, d, &mut rng)).collect();
        let ds = MultiViewDataset::new(views, None, None, 1).unwrap();
        let p = dims.iter().map(|&d| random_orthonormal(m, d, &mut rng)).collect();
        (ds, p)
    }

    fn cfg(layers: usize, m: usize, variant: Variant) -> UnfoldConfig {
        UnfoldConfig { layers, anchors: m, variant, ..Default::default() }
    }

    #[test]
    fn zero_data_is_a_fixed_point() {
        let ds = MultiViewDataset::new(vec![Mat::zeros(4, 3), Mat::zeros(4, 2)], None, None, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = vec![random_orthonormal(2, 3, &mut rng), random_orthonormal(2, 2, &mut rng)];
        let c = UnfoldConfig { recompute_anchors: false, ..cfg(1, 2, Variant::Largemvc) };
        let params = UnfoldParams::init(&c, &ds);
        let trace = forward(&ds, &params, &p, &c).unwrap();
        assert_eq!(trace.final_h(), &Mat::zeros(4, 2));
        assert!(trace.e[1].iter().all(|e| e.iter().all(|&x| x == 0.0)));
        assert_eq!(trace.final_p(), &p[..]);
    }

    #[test]
    fn identity_parameters_give_anchor_projection() {
        let (ds, p) = instance(1, 6, &[4], 3);
        let c = UnfoldConfig { nonneg_h: false, ..cfg(1, 3, Variant::Largemvc) };
        let params = UnfoldParams { theta: vec![0.0], ..UnfoldParams::init(&c, &ds) };
        let zero_e = vec![Mat::zeros(6, 4)];
        let h = represent_step(&Mat::zeros(6, 3), &zero_e, &p, &params, 0, &ds, &c).unwrap();
        assert!((h - ds.view(0) * p[0].transpose()).norm() < 1e-14);
    }

    #[test]
    fn represent_step_matches_classic_h_update() {
        for placement in [ThresholdPlacement::PerView, ThresholdPlacement::AfterAverage] {
            let (ds, p) = instance(2, 10, &[5, 6], 3);
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let mut state = SolverState::initial(&ds, p.clone()).unwrap();
            state.h = gaussian(10, 3, &mut rng).map(f64::abs);
            state.e = vec![gaussian(10, 5, &mut rng) * 0.1, gaussian(10, 6, &mut rng) * 0.1];
            let scfg = SolverConfig { alpha: 0.2, beta: 0.4, placement, ..Default::default() };
            let ucfg = UnfoldConfig { placement, ..cfg(1, 3, Variant::Largemvc) };
            let mut params = UnfoldParams::classic_equivalent(&ucfg, 2, 0.2, 0.4, 1.0, &[]);
            params.r = Mat::identity(3, 3) - &p[0] * p[0].transpose();
            let h_net = represent_step(&state.h, &state.e, &p, &params, 0, &ds, &ucfg).unwrap();
            let h_classic = update_h(&state, &ds, &scfg);
            assert!((&h_net - &h_classic).norm() < 1e-12, "{placement:?}");

            state.h = h_classic;
            let e_net = noise_step(&state.h, &p, &params, 0, &ds, &ucfg).unwrap();
            let e_classic = update_e(&state, &ds, &scfg);
            for (a, b) in e_net.iter().zip(&e_classic) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn noise_step_examples() {
        let ds = MultiViewDataset::new(vec![dmatrix![3.0, 4.0]], None, None, 1).unwrap();
        let c = cfg(1, 2, Variant::Largemvc);
        let params = UnfoldParams { rho: vec![vec![2.0]], ..UnfoldParams::init(&c, &ds) };
        let h = Mat::zeros(1, 2);
        let p = vec![Mat::identity(2, 2)];
        let e = noise_step(&h, &p, &params, 0, &ds, &c).unwrap();
        assert!((&e[0] - dmatrix![1.8, 2.4]).norm() < 1e-15);

        // exact fit
        let fit = noise_step(&dmatrix![3.0, 4.0], &p, &params, 0, &ds, &c).unwrap();
        assert_eq!(fit[0], Mat::zeros(1, 2));

        let amvc = cfg(1, 2, Variant::Amvc);
        let e = noise_step(&h, &p, &params, 0, &ds, &amvc).unwrap();
        assert_eq!(e[0], Mat::zeros(1, 2));
    }

    #[test]
    fn anchor_step_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_orthonormal(3, 5, &mut rng);
        let ds = MultiViewDataset::new(vec![x.clone()], None, None, 1).unwrap();
        let p_prev = vec![random_orthonormal(3, 5, &mut rng)];
        let e = vec![Mat::zeros(3, 5)];
        let h = Mat::identity(3, 3);

        let rmvc = cfg(1, 3, Variant::Rmvc);
        assert_eq!(anchor_step(&h, &e, &p_prev, &ds, &rmvc).unwrap(), p_prev);

        let full = cfg(1, 3, Variant::Largemvc);
        let p = anchor_step(&h, &e, &p_prev, &ds, &full).unwrap();
        assert!((&p[0] - x).norm() < 1e-10);

        let (ds, p_prev) = instance(4, 20, &[6, 7], 4);
        let h = gaussian(20, 4, &mut rng);
        let e = vec![Mat::zeros(20, 6), Mat::zeros(20, 7)];
        for p in anchor_step(&h, &e, &p_prev, &ds, &full).unwrap() {
            assert!(orthogonality_error(&p) <= 1e-8);
        }
    }

    #[test]
    fn forward_is_deterministic_with_orthonormal_stages() {
        let (ds, p) = instance(5, 30, &[6, 8, 5], 4);
        let c = cfg(3, 4, Variant::Largemvc);
        let params = UnfoldParams::init(&c, &ds);
        let a = forward(&ds, &params, &p, &c).unwrap();
        let b = forward(&ds, &params, &p, &c).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.layers(), 3);
        for stage in &a.p {
            for pv in stage {
                assert!(orthogonality_error(pv) <= 1e-8);
            }
        }
    }

    #[test]
    fn skipped_noise_module_ignores_rho() {
        let (ds, p) = instance(6, 25, &[6, 7], 3);
        for variant in [Variant::Rmvc, Variant::Amvc] {
            let c = cfg(2, 3, variant);
            let params = UnfoldParams::init(&c, &ds);
            let mut perturbed = params.clone();
            perturbed.rho = vec![vec![5.0, 0.0], vec![0.3, 17.0]];
            assert_eq!(
                forward(&ds, &params, &p, &c).unwrap(),
                forward(&ds, &perturbed, &p, &c).unwrap()
            );
        }
    }

    #[test]
    fn frozen_forward_reproduces_trace() {
        let (ds, p) = instance(8, 15, &[5, 6], 3);
        let c = cfg(2, 3, Variant::Largemvc);
        let params = UnfoldParams::init(&c, &ds);
        let trace = forward(&ds, &params, &p, &c).unwrap();
        assert_eq!(forward_frozen(&ds, &params, &trace.p, &c).unwrap(), trace);
    }

    #[test]
    fn params_validation() {
        let (ds, _) = instance(0, 4, &[3, 3], 3);
        let c = cfg(2, 3, Variant::Largemvc);
        let mut params = UnfoldParams::init(&c, &ds);
        assert!(params.validate(&c, 2).is_ok());
        assert!(params.validate(&c, 3).is_err());
        params.theta[1] = -0.5;
        assert!(params.validate(&c, 2).is_err());
        params.clamp_thresholds();
        assert_eq!(params.theta[1], 0.0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let (ds, p) = instance(9, 5, &[4, 5], 2);
        let c = cfg(3, 2, Variant::Amvc);
        let mut params = UnfoldParams::init(&c, &ds);
        params.r[(0, 1)] = 0.123456789012345;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        Checkpoint::new(&params, &c, Some(&p)).save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.params().unwrap(), params);
        assert_eq!(loaded.anchors().unwrap().unwrap(), p);
        assert_eq!(loaded.variant, Variant::Amvc);
    }

    #[test]
    fn rho_init_follows_row_norms() {
        let ds = MultiViewDataset::new(
            vec![dmatrix![3.0, 4.0; 0.0, 1.0; 6.0, 8.0], dmatrix![1.0; 2.0; 100.0]],
            None,
            None,
            1,
        )
        .unwrap();
        let c = UnfoldConfig { rho_init: RhoInit::RowNormFraction(0.5), ..cfg(2, 1, Variant::Largemvc) };
        let params = UnfoldParams::init(&c, &ds);
        assert_eq!(params.rho, vec![vec![2.5, 1.0]; 2]);
        let fixed = UnfoldConfig { rho_init: RhoInit::Fixed(0.1), ..c };
        assert_eq!(UnfoldParams::init(&fixed, &ds).rho, vec![vec![0.1, 0.1]; 2]);
        let negative = UnfoldConfig { rho_init: RhoInit::Fixed(-1.0), ..c };
        assert!(negative.validate().is_err());
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("RMvC".parse::<Variant>().unwrap(), Variant::Rmvc);
        assert_eq!("largemvc".parse::<Variant>().unwrap(), Variant::Largemvc);
        assert!("foo".parse::<Variant>().is_err());
    }
}
