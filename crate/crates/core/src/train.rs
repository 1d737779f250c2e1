//! Unsupervised training of the unfolded network.
//!
//! The loss is `Σ_v ‖X_v − H⁽ᴸ⁾ P_v⁽ᴸ⁾‖²_F` over observed rows. Gradients
//! are computed by a hand-written reverse pass through every
//! RepresentModule and NoiseModule; the anchors `P⁽ˡ⁾` produced by the
//! AnchorModule are treated as constants (no gradient through the SVD).
//! Shrinkage kinks get derivative 0.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::MultiViewDataset;
use crate::linalg::{gaussian, random_orthonormal, row_dots, row_norms};
use crate::prox::{row_shrink_scale, scale_rows, soft_threshold_slope};
use crate::solver::{init_anchors, ThresholdPlacement};
use crate::unfold::{
    forward, forward_frozen, represent_candidates, view_projections, ForwardTrace, UnfoldConfig, UnfoldParams, Variant,
};
use crate::{Mat, MvcError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Gd,
    Momentum,
}

/// Scaling of the objective the optimizer descends. The reported loss is
/// always the plain sum of squares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossScale {
    /// `Σ_v ‖X_v − H P_v‖²_F`.
    Sum,
    /// `Σ_v ‖X_v − H P_v‖²_F / (n_v d_v)`: per-view mean squared error,
    /// `n_v` being the number of observed rows.
    Mean,
    /// `Σ_v ‖X_v − H P_v‖²_F / n_v`: squared error per observed sample.
    PerSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub momentum: f64,
    pub seed: u64,
    /// Rescale the step gradient to at most this norm.
    pub grad_clip: Option<f64>,
    pub loss_scale: LossScale,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            learning_rate: 0.01,
            optimizer: Optimizer::Gd,
            momentum: 0.9,
            seed: 0,
            grad_clip: None,
            loss_scale: LossScale::PerSample,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(MvcError::Config("epochs must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(MvcError::Config("learning rate must be nonnegative".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(MvcError::Config("grad_clip must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub loss: Vec<f64>,
    pub grad_norm: Vec<f64>,
    pub wall_time: Vec<f64>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,grad_norm,seconds\n");
        for (i, ((l, g), t)) in self.loss.iter().zip(&self.grad_norm).zip(&self.wall_time).enumerate() {
            out.push_str(&format!("{},{l:?},{g:?},{t:?}\n", i + 1));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: UnfoldParams,
    pub history: TrainHistory,
    /// Anchors every forward pass starts from.
    pub p_init: Vec<Mat>,
}

fn check_trace(ds: &MultiViewDataset, trace: &ForwardTrace) -> Result<()> {
    let h = trace.final_h();
    let p = trace.final_p();
    if h.nrows() != ds.n_samples() || p.len() != ds.n_views() {
        return Err(MvcError::Shape("trace does not match the dataset".into()));
    }
    for (v, pv) in p.iter().enumerate() {
        if pv.nrows() != h.ncols() || pv.ncols() != ds.view(v).ncols() {
            return Err(MvcError::Shape(format!("final anchors of view {v} have the wrong shape")));
        }
    }
    Ok(())
}

fn masked_residual(ds: &MultiViewDataset, h: &Mat, p: &Mat, v: usize) -> Mat {
    let mut r = ds.view(v) - h * p;
    ds.mask_rows(v, &mut r);
    r
}

/// `Σ_v ‖X_v − H⁽ᴸ⁾ P_v⁽ᴸ⁾‖²_F` over observed rows.
pub fn reconstruction_loss(ds: &MultiViewDataset, trace: &ForwardTrace) -> Result<f64> {
    check_trace(ds, trace)?;
    let (h, p) = (trace.final_h(), trace.final_p());
    Ok((0..ds.n_views())
        .map(|v| masked_residual(ds, h, &p[v], v).norm_squared())
        .sum())
}

fn view_weights(ds: &MultiViewDataset, scale: LossScale) -> Vec<f64> {
    (0..ds.n_views())
        .map(|v| match scale {
            LossScale::Sum => 1.0,
            LossScale::Mean => {
                let rows = ds.observed_rows(v).len().max(1);
                1.0 / (rows * ds.view(v).ncols()) as f64
            }
            LossScale::PerSample => 1.0 / ds.observed_rows(v).len().max(1) as f64,
        })
        .collect()
}

/// Gradient of [`reconstruction_loss`] with respect to every parameter
/// block, anchors held fixed at their trace values.
pub fn backward(
    ds: &MultiViewDataset,
    trace: &ForwardTrace,
    params: &UnfoldParams,
    cfg: &UnfoldConfig,
) -> Result<UnfoldParams> {
    backward_weighted(ds, trace, params, cfg, &vec![1.0; ds.n_views()])
}

fn backward_weighted(
    ds: &MultiViewDataset,
    trace: &ForwardTrace,
    params: &UnfoldParams,
    cfg: &UnfoldConfig,
    weights: &[f64],
) -> Result<UnfoldParams> {
    check_trace(ds, trace)?;
    params.validate(cfg, ds.n_views())?;
    if trace.layers() != cfg.layers {
        return Err(MvcError::Shape(format!(
            "trace has {} layers, config {}",
            trace.layers(),
            cfg.layers
        )));
    }
    let n_views = ds.n_views();
    let n = ds.n_samples();
    let m = cfg.anchors;
    let counts = ds.observed_counts();
    let mut grad = params.zeros_like();

    // dLoss/dH⁽ᴸ⁾
    let h_last = trace.final_h();
    let mut g_h = Mat::zeros(n, m);
    for v in 0..n_views {
        let r = masked_residual(ds, h_last, &trace.final_p()[v], v);
        g_h -= (r * trace.final_p()[v].transpose()) * (2.0 * weights[v]);
    }
    // dLoss/dE⁽ˡ⁺¹⁾ flowing back from the next stage.
    let mut g_e: Vec<Mat> = ds.dims().into_iter().map(|d| Mat::zeros(n, d)).collect();

    for layer in (0..cfg.layers).rev() {
        let h_next = &trace.h[layer + 1];
        let p = &trace.p[layer];

        if cfg.variant.has_noise_module() {
            for v in 0..n_views {
                let rho = params.rho[layer][v];
                let mut z = ds.view(v).clone();
                z.gemm(-1.0, h_next, &p[v], 1.0);
                let norms = row_norms(&z);
                let dots = row_dots(&z, &g_e[v]);
                let mut scale_g = vec![0.0; n];
                let mut scale_z = vec![0.0; n];
                for i in 0..n {
                    if norms[i] <= rho || !ds.is_observed(v, i) {
                        continue;
                    }
                    scale_g[i] = row_shrink_scale(norms[i], rho);
                    scale_z[i] = rho * dots[i] / norms[i].powi(3);
                    grad.rho[layer][v] -= dots[i] / norms[i];
                }
                let mut g_z = std::mem::replace(&mut g_e[v], Mat::zeros(0, 0));
                scale_rows(&mut g_z, &scale_g);
                scale_rows(&mut z, &scale_z);
                g_z += z;
                g_h.gemm(-1.0, &g_z, &p[v].transpose(), 1.0);
            }
        }

        let h_prev = &trace.h[layer];
        let e_prev = &trace.e[layer];
        let projections = view_projections(e_prev, p, ds, cfg);
        let candidates = represent_candidates(h_prev, &projections, params);
        let theta = params.theta[layer];
        let mut g_cand: Vec<Mat> = vec![Mat::zeros(n, m); n_views];
        match cfg.placement {
            ThresholdPlacement::PerView => {
                for v in 0..n_views {
                    for j in 0..m {
                        for i in 0..n {
                            if !ds.is_observed(v, i) {
                                continue;
                            }
                            let a = candidates[v][(i, j)];
                            let slope = soft_threshold_slope(a, theta, cfg.nonneg_h);
                            if slope > 0.0 {
                                let g = g_h[(i, j)] / counts[i] as f64;
                                g_cand[v][(i, j)] = g;
                                grad.theta[layer] -= g * a.signum();
                            }
                        }
                    }
                }
            }
            ThresholdPlacement::AfterAverage => {
                for j in 0..m {
                    for i in 0..n {
                        let inv = 1.0 / counts[i] as f64;
                        let avg: f64 = (0..n_views)
                            .filter(|&v| ds.is_observed(v, i))
                            .map(|v| candidates[v][(i, j)])
                            .sum::<f64>()
                            * inv;
                        if soft_threshold_slope(avg, theta, cfg.nonneg_h) > 0.0 {
                            let g = g_h[(i, j)];
                            grad.theta[layer] -= g * avg.signum();
                            for v in 0..n_views {
                                if ds.is_observed(v, i) {
                                    g_cand[v][(i, j)] = g * inv;
                                }
                            }
                        }
                    }
                }
            }
        }

        let mut g_sum = Mat::zeros(n, m);
        for v in 0..n_views {
            g_sum += &g_cand[v];
            grad.u.gemm_tr(1.0, &projections[v], &g_cand[v], 1.0);
            if cfg.variant.has_noise_module() {
                g_e[v] = -(&g_cand[v] * params.u.transpose()) * &p[v];
            }
        }
        grad.r.gemm_tr(1.0, h_prev, &g_sum, 1.0);
        g_h = g_sum * params.r.transpose();
    }
    Ok(grad)
}

fn sgd_step(params: &mut UnfoldParams, velocity: &mut UnfoldParams, grad: &UnfoldParams, cfg: &TrainConfig) {
    match cfg.optimizer {
        Optimizer::Gd => params.add_scaled(grad, -cfg.learning_rate),
        Optimizer::Momentum => {
            velocity.scale(cfg.momentum);
            velocity.add_scaled(grad, 1.0);
            params.add_scaled(velocity, -cfg.learning_rate);
        }
    }
    params.clamp_thresholds();
}

/// Full-batch training: per epoch forward → loss → backward → step, with
/// thresholds clamped at zero after every step.
pub fn train(ds: &MultiViewDataset, ucfg: &UnfoldConfig, tcfg: &TrainConfig) -> Result<TrainOutcome> {
    ucfg.validate()?;
    tcfg.validate()?;
    let p_init = init_anchors(ds, ucfg.anchors, tcfg.seed)?;
    let params = UnfoldParams::init(ucfg, ds);
    train_from(ds, ucfg, tcfg, params, p_init)
}

/// [`train`] from given initial parameters and anchors.
pub fn train_from(
    ds: &MultiViewDataset,
    ucfg: &UnfoldConfig,
    tcfg: &TrainConfig,
    mut params: UnfoldParams,
    p_init: Vec<Mat>,
) -> Result<TrainOutcome> {
    ucfg.validate()?;
    tcfg.validate()?;
    let weights = view_weights(ds, tcfg.loss_scale);
    let mut velocity = params.zeros_like();
    let mut history = TrainHistory::default();
    for epoch in 0..tcfg.epochs {
        let start = Instant::now();
        let trace = forward(ds, &params, &p_init, ucfg)?;
        let loss = reconstruction_loss(ds, &trace)?;
        if !loss.is_finite() {
            return Err(MvcError::Numerical(format!("non-finite loss at epoch {}", epoch + 1)));
        }
        let mut grad = backward_weighted(ds, &trace, &params, ucfg, &weights)?;
        let mut norm = grad.norm();
        if !norm.is_finite() {
            return Err(MvcError::Numerical(format!("non-finite gradient at epoch {}", epoch + 1)));
        }
        if let Some(clip) = tcfg.grad_clip {
            if norm > clip {
                grad.scale(clip / norm);
                norm = clip;
            }
        }
        sgd_step(&mut params, &mut velocity, &grad, tcfg);
        history.loss.push(loss);
        history.grad_norm.push(norm);
        history.wall_time.push(start.elapsed().as_secs_f64());
    }
    Ok(TrainOutcome {
        params,
        history,
        p_init,
    })
}

/// Maximum relative error of one parameter block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockError {
    pub block: String,
    pub max_rel_err: f64,
    pub max_abs_grad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockError>,
    pub tolerance: f64,
    pub passed: bool,
    /// Instances drawn before one without near-kink activations was found.
    pub attempts: usize,
}

/// Setup of a gradient-check instance.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckSpec {
    pub n: usize,
    pub anchors: usize,
    pub views: usize,
    pub layers: usize,
    pub seed: u64,
    pub variant: Variant,
    pub placement: ThresholdPlacement,
    pub nonneg_h: bool,
    /// Overrides the drawn ℓ1 thresholds (e.g. a huge value for a dead network).
    pub theta: Option<f64>,
}

impl GradCheckSpec {
    pub fn new(n: usize, anchors: usize, views: usize, layers: usize, seed: u64) -> Self {
        GradCheckSpec {
            n,
            anchors,
            views,
            layers,
            seed,
            variant: Variant::Largemvc,
            placement: ThresholdPlacement::PerView,
            nonneg_h: true,
            theta: None,
        }
    }
}

/// Compares [`backward`] with central differences of the frozen-anchor
/// loss on a random instance; see [`grad_check_with`].
pub fn grad_check(n: usize, m: usize, n_views: usize, layers: usize, seed: u64, tolerance: f64) -> Result<GradCheckReport> {
    grad_check_with(&GradCheckSpec::new(n, m, n_views, layers, seed), tolerance)
}

struct Instance {
    ds: MultiViewDataset,
    params: UnfoldParams,
    p_init: Vec<Mat>,
    cfg: UnfoldConfig,
}

fn draw_instance(spec: &GradCheckSpec, seed: u64) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = spec.anchors;
    let dims: Vec<usize> = (0..spec.views).map(|v| m + 2 + v).collect();
    let views = dims.iter().map(|&d| gaussian(spec.n, d, &mut rng)).collect();
    let ds = MultiViewDataset::new(views, None, None, 1)?;
    let cfg = UnfoldConfig {
        layers: spec.layers,
        anchors: m,
        variant: spec.variant,
        nonneg_h: spec.nonneg_h,
        placement: spec.placement,
        ..Default::default()
    };
    let r = gaussian(m, m, &mut rng) * (0.3 / (m as f64).sqrt());
    let u = Mat::identity(m, m) + gaussian(m, m, &mut rng) * 0.2;
    let theta = (0..spec.layers).map(|_| spec.theta.unwrap_or(0.05)).collect();
    let rho = (0..spec.layers)
        .map(|_| dims.iter().map(|&d| 0.6 * (d as f64).sqrt()).collect())
        .collect();
    let params = UnfoldParams { r, u, theta, rho };
    let p_init = dims.iter().map(|&d| random_orthonormal(m, d, &mut rng)).collect();
    Ok(Instance { ds, params, p_init, cfg })
}

/// Smallest distance of any activation to a shrinkage kink.
fn kink_margin(inst: &Instance, trace: &ForwardTrace) -> f64 {
    let Instance { ds, params, cfg, .. } = inst;
    let mut margin = f64::INFINITY;
    for layer in 0..cfg.layers {
        let theta = params.theta[layer];
        let projections = view_projections(&trace.e[layer], &trace.p[layer], ds, cfg);
        let candidates = represent_candidates(&trace.h[layer], &projections, params);
        let values: Vec<f64> = match cfg.placement {
            ThresholdPlacement::PerView => candidates.iter().flat_map(|c| c.iter().copied()).collect(),
            ThresholdPlacement::AfterAverage => {
                let mut sum = Mat::zeros(ds.n_samples(), cfg.anchors);
                for c in &candidates {
                    sum += c;
                }
                (sum / ds.n_views() as f64).iter().copied().collect()
            }
        };
        for a in values {
            margin = margin.min((a - theta).abs());
            if !cfg.nonneg_h {
                margin = margin.min((a + theta).abs());
            }
        }
        if cfg.variant.has_noise_module() {
            for v in 0..ds.n_views() {
                let z = ds.view(v) - &trace.h[layer + 1] * &trace.p[layer][v];
                for row in z.row_iter() {
                    margin = margin.min((row.norm() - params.rho[layer][v]).abs());
                }
            }
        }
    }
    margin
}

fn block_error(name: &str, analytic: &[f64], numeric: &[f64]) -> BlockError {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |acc, x| acc.max(x.abs()));
    let max_diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
    BlockError {
        block: name.into(),
        max_rel_err: if scale > 0.0 { max_diff / scale } else { 0.0 },
        max_abs_grad: scale,
    }
}

/// Draws a random instance (resampling while any activation lies within
/// `1e-3` of a kink), computes the analytic gradient, and compares every
/// parameter entry with a central difference of step `1e-6 · max(1, |x|)`
/// taken with all anchors frozen at the trace values. The per-block error
/// is `max|analytic − numeric| / max(|analytic|, |numeric|)`.
pub fn grad_check_with(spec: &GradCheckSpec, tolerance: f64) -> Result<GradCheckReport> {
    if spec.n == 0 || spec.anchors == 0 || spec.views == 0 || spec.layers == 0 {
        return Err(MvcError::Config("grad check sizes must be positive".into()));
    }
    let mut attempts = 0;
    let (inst, trace) = loop {
        attempts += 1;
        let inst = draw_instance(spec, spec.seed.wrapping_add(attempts as u64 - 1))?;
        let trace = forward(&inst.ds, &inst.params, &inst.p_init, &inst.cfg)?;
        if kink_margin(&inst, &trace) >= 1e-3 || attempts >= 200 {
            break (inst, trace);
        }
    };
    let analytic = backward(&inst.ds, &trace, &inst.params, &inst.cfg)?;
    let frozen_loss = |p: &UnfoldParams| -> Result<f64> {
        let t = forward_frozen(&inst.ds, p, &trace.p, &inst.cfg)?;
        reconstruction_loss(&inst.ds, &t)
    };
    let central = |perturb: &dyn Fn(&mut UnfoldParams, f64), x: f64| -> Result<f64> {
        let h = 1e-6 * x.abs().max(1.0);
        let mut plus = inst.params.clone();
        perturb(&mut plus, h);
        let mut minus = inst.params.clone();
        perturb(&mut minus, -h);
        Ok((frozen_loss(&plus)? - frozen_loss(&minus)?) / (2.0 * h))
    };

    let m = spec.anchors;
    let mut blocks = Vec::new();
    for (name, is_r) in [("R", true), ("U", false)] {
        let mut a = Vec::new();
        let mut f = Vec::new();
        for i in 0..m {
            for j in 0..m {
                let (x, g) = if is_r {
                    (inst.params.r[(i, j)], analytic.r[(i, j)])
                } else {
                    (inst.params.u[(i, j)], analytic.u[(i, j)])
                };
                let perturb = move |p: &mut UnfoldParams, d: f64| {
                    if is_r {
                        p.r[(i, j)] += d
                    } else {
                        p.u[(i, j)] += d
                    }
                };
                a.push(g);
                f.push(central(&perturb, x)?);
            }
        }
        blocks.push(block_error(name, &a, &f));
    }
    let mut a = Vec::new();
    let mut f = Vec::new();
    for l in 0..spec.layers {
        let perturb = move |p: &mut UnfoldParams, d: f64| p.theta[l] += d;
        a.push(analytic.theta[l]);
        f.push(central(&perturb, inst.params.theta[l])?);
    }
    blocks.push(block_error("theta", &a, &f));
    let mut a = Vec::new();
    let mut f = Vec::new();
    for l in 0..spec.layers {
        for v in 0..spec.views {
            let perturb = move |p: &mut UnfoldParams, d: f64| p.rho[l][v] += d;
            a.push(analytic.rho[l][v]);
            f.push(central(&perturb, inst.params.rho[l][v])?);
        }
    }
    blocks.push(block_error("rho", &a, &f));

    let passed = blocks.iter().all(|b| b.max_rel_err <= tolerance);
    Ok(GradCheckReport {
        blocks,
        tolerance,
        passed,
        attempts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prox::random_orthonormal;
    use nalgebra::dmatrix;

    fn trace_of(h: Mat, p: Vec<Mat>) -> ForwardTrace {
        let e = vec![p.iter().map(|pv| Mat::zeros(h.nrows(), pv.ncols())).collect()];
        ForwardTrace { h: vec![h], e, p: vec![p] }
    }

    fn instance(seed: u64, n: usize, dims: &[usize]) -> MultiViewDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let views = dims.iter().map(|&d| gaussian(n, d, &mut rng)).collect();
        MultiViewDataset::new(views, None, None, 1).unwrap()
    }

    #[test]
    fn loss_examples() {
        let x = dmatrix![1.0, 0.0; 0.0, 1.0];
        let ds = MultiViewDataset::new(vec![x.clone()], None, None, 1).unwrap();
        let exact = trace_of(Mat::identity(2, 2), vec![Mat::identity(2, 2)]);
        assert_eq!(reconstruction_loss(&ds, &exact).unwrap(), 0.0);
        let dead = trace_of(Mat::zeros(2, 2), vec![Mat::identity(2, 2)]);
        assert!((reconstruction_loss(&ds, &dead).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn loss_matches_direct_sum() {
        let ds = instance(1, 12, &[5, 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = gaussian(12, 3, &mut rng);
        let p = vec![random_orthonormal(3, 5, &mut rng), random_orthonormal(3, 4, &mut rng)];
        let mut expected = 0.0;
        for v in 0..2 {
            for i in 0..12 {
                for j in 0..ds.view(v).ncols() {
                    let mut hp = 0.0;
                    for k in 0..3 {
                        hp += h[(i, k)] * p[v][(k, j)];
                    }
                    expected += (ds.view(v)[(i, j)] - hp).powi(2);
                }
            }
        }
        let got = reconstruction_loss(&ds, &trace_of(h, p)).unwrap();
        assert!((got - expected).abs() <= 1e-10 * expected);
    }

    #[test]
    fn dead_network_has_zero_gradient() {
        let mut spec = GradCheckSpec::new(20, 3, 2, 2, 0);
        spec.theta = Some(1e12);
        let report = grad_check_with(&spec, 1e-4).unwrap();
        assert!(report.passed);
        for b in &report.blocks {
            if b.block != "rho" {
                assert_eq!(b.max_abs_grad, 0.0, "{}", b.block);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for variant in Variant::ALL {
            for placement in [ThresholdPlacement::PerView, ThresholdPlacement::AfterAverage] {
                let spec = GradCheckSpec { variant, placement, ..GradCheckSpec::new(30, 3, 2, 2, 5) };
                let report = grad_check_with(&spec, 1e-4).unwrap();
                assert!(report.passed, "{variant:?} {placement:?}: {:?}", report.blocks);
            }
        }
        let spec = GradCheckSpec { nonneg_h: false, ..GradCheckSpec::new(25, 2, 3, 3, 9) };
        assert!(grad_check_with(&spec, 1e-4).unwrap().passed);
    }

    #[test]
    fn zero_tolerance_fails() {
        assert!(!grad_check(20, 3, 2, 2, 1, 0.0).unwrap().passed);
    }

    #[test]
    fn noise_free_variant_has_zero_rho_gradient() {
        let ds = instance(3, 15, &[5, 6]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = vec![random_orthonormal(3, 5, &mut rng), random_orthonormal(3, 6, &mut rng)];
        for variant in [Variant::Rmvc, Variant::Amvc] {
            let cfg = UnfoldConfig { layers: 2, anchors: 3, variant, ..Default::default() };
            let params = UnfoldParams::init(&cfg, &ds);
            let trace = forward(&ds, &params, &p, &cfg).unwrap();
            let g = backward(&ds, &trace, &params, &cfg).unwrap();
            assert!(g.rho.iter().flatten().all(|&x| x == 0.0));
            assert!(g.r.norm() > 0.0);
        }
    }

    fn setup() -> (MultiViewDataset, UnfoldConfig, Vec<Mat>) {
        let ds = instance(6, 20, &[5, 6]);
        let cfg = UnfoldConfig { layers: 2, anchors: 3, ..Default::default() };
        let p = init_anchors(&ds, 3, 0).unwrap();
        (ds, cfg, p)
    }

    #[test]
    fn one_epoch_is_one_gradient_step() {
        let (ds, ucfg, p) = setup();
        let tcfg = TrainConfig { epochs: 1, learning_rate: 0.05, loss_scale: LossScale::Sum, ..Default::default() };
        let init = UnfoldParams::init(&ucfg, &ds);
        let out = train_from(&ds, &ucfg, &tcfg, init.clone(), p.clone()).unwrap();
        let trace = forward(&ds, &init, &p, &ucfg).unwrap();
        let mut manual = init.clone();
        manual.add_scaled(&backward(&ds, &trace, &init, &ucfg).unwrap(), -0.05);
        manual.clamp_thresholds();
        assert_eq!(out.params, manual);
        assert_eq!(out.history.loss, vec![reconstruction_loss(&ds, &trace).unwrap()]);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (ds, ucfg, p) = setup();
        let tcfg = TrainConfig { epochs: 3, learning_rate: 0.0, ..Default::default() };
        let init = UnfoldParams::init(&ucfg, &ds);
        let out = train_from(&ds, &ucfg, &tcfg, init.clone(), p).unwrap();
        assert_eq!(out.params, init);
        assert!(out.history.loss.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn training_reduces_loss_and_keeps_thresholds_nonnegative() {
        let (ds, ucfg, p) = setup();
        for optimizer in [Optimizer::Gd, Optimizer::Momentum] {
            let tcfg = TrainConfig { epochs: 30, optimizer, ..Default::default() };
            let out = train_from(&ds, &ucfg, &tcfg, UnfoldParams::init(&ucfg, &ds), p.clone()).unwrap();
            let loss = &out.history.loss;
            assert_eq!(loss.len(), 30);
            assert!(loss[29] < loss[0], "{optimizer:?}: {loss:?}");
            assert!(out.params.theta.iter().all(|&t| t >= 0.0));
            assert!(out.params.rho.iter().flatten().all(|&r| r >= 0.0));
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let (ds, ucfg, _) = setup();
        let tcfg = TrainConfig { learning_rate: -1.0, ..Default::default() };
        assert!(matches!(train(&ds, &ucfg, &tcfg), Err(MvcError::Config(_))));
    }

    #[test]
    fn history_csv_layout() {
        let h = TrainHistory { loss: vec![2.0, 1.0], grad_norm: vec![0.5, 0.25], wall_time: vec![0.1, 0.1] };
        let csv = h.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "epoch,loss,grad_norm,seconds");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("1,2"));
    }
}
