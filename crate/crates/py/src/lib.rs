//! Python bindings. Matrices cross the boundary as lists of rows.

use largemvc::cluster::{self, KMeansConfig};
use largemvc::data::{self, MultiViewDataset, Normalization, SynthSpec};
use largemvc::experiment::{self, ExperimentConfig};
use largemvc::prox::{self, Threshold};
use largemvc::solver::{self, SolverConfig};
use largemvc::train::{self, TrainConfig};
use largemvc::unfold::{forward, Checkpoint, UnfoldConfig, Variant};
use largemvc::{Mat, MvcError};
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: MvcError) -> PyErr {
    match e {
        MvcError::Numerical(_) => PyArithmeticError::new_err(e.to_string()),
        MvcError::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_mat(rows: &[Vec<f64>]) -> PyResult<Mat> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("matrix rows must have equal length"));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Mat::from_row_slice(rows.len(), cols, &flat))
}

fn to_rows(a: &Mat) -> Vec<Vec<f64>> {
    a.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn parse_variant(name: &str) -> PyResult<Variant> {
    name.parse().map_err(to_py)
}

/// A validated multi-view dataset.
#[pyclass(name = "Dataset", module = "largemvc", frozen)]
struct PyDataset {
    inner: MultiViewDataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (views, labels=None, masks=None, n_clusters=None))]
    fn new(
        views: Vec<Vec<Vec<f64>>>,
        labels: Option<Vec<usize>>,
        masks: Option<Vec<Vec<bool>>>,
        n_clusters: Option<usize>,
    ) -> PyResult<Self> {
        let views = views.iter().map(|v| to_mat(v)).collect::<PyResult<Vec<_>>>()?;
        let c = n_clusters
            .or_else(|| labels.as_ref().and_then(|y| y.iter().max()).map(|m| m + 1))
            .unwrap_or(1);
        let inner = MultiViewDataset::new(views, labels, masks, c).map_err(to_py)?;
        Ok(PyDataset { inner })
    }

    /// Gaussian-cluster data seen through random per-view linear maps.
    #[staticmethod]
    #[pyo3(signature = (n=1000, clusters=5, dims=vec![20, 30, 40], seed=0, corrupt=0.0))]
    fn synthetic(n: usize, clusters: usize, dims: Vec<usize>, seed: u64, corrupt: f64) -> PyResult<Self> {
        let spec = SynthSpec {
            n,
            n_views: dims.len(),
            n_clusters: clusters,
            latent_dim: clusters,
            view_dims: dims,
            corrupt_row_fraction: corrupt,
            seed,
            ..Default::default()
        };
        Ok(PyDataset {
            inner: data::generate_synthetic(&spec).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(dir: &str) -> PyResult<Self> {
        Ok(PyDataset {
            inner: data::load_dataset(dir).map_err(to_py)?,
        })
    }

    fn save(&self, dir: &str) -> PyResult<()> {
        data::save_dataset(&self.inner, dir).map_err(to_py)
    }

    /// A copy with about `rate` of the (sample, view) pairs unobserved.
    fn with_missing(&self, rate: f64, seed: u64) -> PyResult<Self> {
        Ok(PyDataset {
            inner: data::apply_missing(&self.inner, rate, seed).map_err(to_py)?,
        })
    }

    /// A copy with every view normalized (`"zscore"`, `"unit_row"` or `"none"`).
    fn normalized(&self, mode: &str) -> PyResult<Self> {
        let mode = match mode {
            "zscore" => Normalization::Zscore,
            "unit_row" => Normalization::UnitRow,
            "none" => Normalization::None,
            other => return Err(PyValueError::new_err(format!("unknown normalization {other:?}"))),
        };
        Ok(PyDataset {
            inner: data::normalize_views(&self.inner, mode),
        })
    }

    #[getter]
    fn n_samples(&self) -> usize {
        self.inner.n_samples()
    }

    #[getter]
    fn n_views(&self) -> usize {
        self.inner.n_views()
    }

    #[getter]
    fn n_clusters(&self) -> usize {
        self.inner.n_clusters()
    }

    #[getter]
    fn dims(&self) -> Vec<usize> {
        self.inner.dims()
    }

    #[getter]
    fn labels(&self) -> Option<Vec<usize>> {
        self.inner.labels().map(<[usize]>::to_vec)
    }

    #[getter]
    fn masks(&self) -> Option<Vec<Vec<bool>>> {
        self.inner.masks().map(<[Vec<bool>]>::to_vec)
    }

    fn view(&self, v: usize) -> PyResult<Vec<Vec<f64>>> {
        if v >= self.inner.n_views() {
            return Err(PyValueError::new_err(format!("view index {v} out of range")));
        }
        Ok(to_rows(self.inner.view(v)))
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n_samples={}, dims={:?}, n_clusters={})",
            self.inner.n_samples(),
            self.inner.dims(),
            self.inner.n_clusters()
        )
    }
}

/// Fits the classic alternating solver; returns `{"h", "anchors", "objective"}`.
#[pyfunction]
#[pyo3(signature = (dataset, anchors, alpha=1e-3, beta=1e-3, max_iters=100, seed=0))]
fn solve<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    anchors: usize,
    alpha: f64,
    beta: f64,
    max_iters: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = SolverConfig {
        alpha,
        beta,
        anchors,
        max_iters,
        seed,
        ..Default::default()
    };
    let state = py.detach(|| solver::solve(&dataset.inner, &cfg)).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("h", to_rows(&state.h))?;
    out.set_item("anchors", state.p.iter().map(to_rows).collect::<Vec<_>>())?;
    out.set_item("objective", state.objective_history)?;
    Ok(out)
}

/// Trains the unfolded network; returns `{"h", "loss", "grad_norm", "checkpoint"}`
/// where `checkpoint` is the JSON parameter checkpoint.
#[pyfunction]
#[pyo3(signature = (dataset, anchors, layers=2, variant="largemvc", epochs=100, lr=0.01, seed=0))]
#[allow(clippy::too_many_arguments)]
fn train_network<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    anchors: usize,
    layers: usize,
    variant: &str,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let ucfg = UnfoldConfig {
        layers,
        anchors,
        variant: parse_variant(variant)?,
        ..Default::default()
    };
    let tcfg = TrainConfig {
        epochs,
        learning_rate: lr,
        seed,
        ..Default::default()
    };
    let ds = &dataset.inner;
    let (outcome, h) = py
        .detach(|| {
            let outcome = train::train(ds, &ucfg, &tcfg)?;
            let trace = forward(ds, &outcome.params, &outcome.p_init, &ucfg)?;
            Ok((outcome, trace.final_h().clone()))
        })
        .map_err(to_py)?;
    let ckpt = Checkpoint::new(&outcome.params, &ucfg, Some(&outcome.p_init));
    let out = PyDict::new(py);
    out.set_item("h", to_rows(&h))?;
    out.set_item("loss", outcome.history.loss)?;
    out.set_item("grad_norm", outcome.history.grad_norm)?;
    out.set_item("checkpoint", serde_json::to_string(&ckpt).expect("checkpoint serializes"))?;
    Ok(out)
}

/// k-means++ / Lloyd; returns the cluster id of every row.
#[pyfunction]
#[pyo3(signature = (points, k, seed=0))]
fn kmeans(points: Vec<Vec<f64>>, k: usize, seed: u64) -> PyResult<Vec<usize>> {
    let fit = cluster::kmeans(&to_mat(&points)?, &KMeansConfig::new(k, seed)).map_err(to_py)?;
    Ok(fit.assignments)
}

#[pyfunction]
fn accuracy(y_true: Vec<usize>, y_pred: Vec<usize>) -> PyResult<f64> {
    cluster::accuracy(&y_true, &y_pred).map_err(to_py)
}

#[pyfunction]
fn nmi(y_true: Vec<usize>, y_pred: Vec<usize>) -> PyResult<f64> {
    cluster::nmi(&y_true, &y_pred).map_err(to_py)
}

#[pyfunction]
fn ari(y_true: Vec<usize>, y_pred: Vec<usize>) -> PyResult<f64> {
    cluster::ari(&y_true, &y_pred).map_err(to_py)
}

/// Entrywise soft-thresholding.
#[pyfunction]
#[pyo3(signature = (a, theta, nonneg=false))]
fn soft_threshold(a: Vec<Vec<f64>>, theta: f64, nonneg: bool) -> PyResult<Vec<Vec<f64>>> {
    let t = Threshold::new(theta).map_err(to_py)?;
    Ok(to_rows(&prox::soft_threshold(&to_mat(&a)?, t, nonneg)))
}

/// Row-wise ℓ2 shrinkage.
#[pyfunction]
fn row_shrink(a: Vec<Vec<f64>>, rho: f64) -> PyResult<Vec<Vec<f64>>> {
    let t = Threshold::new(rho).map_err(to_py)?;
    Ok(to_rows(&prox::row_shrink(&to_mat(&a)?, t)))
}

/// The row-orthonormal matrix closest to `m` (`m` is `rows <= cols`).
#[pyfunction]
fn procrustes(m: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(to_rows(&prox::procrustes(&to_mat(&m)?).map_err(to_py)?))
}

/// Finite-difference check of the analytic gradient; returns
/// `{"passed", "blocks": {name: max relative error}}`.
#[pyfunction]
#[pyo3(signature = (n=40, anchors=4, views=2, layers=2, seed=0, tolerance=1e-4))]
fn grad_check<'py>(
    py: Python<'py>,
    n: usize,
    anchors: usize,
    views: usize,
    layers: usize,
    seed: u64,
    tolerance: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let report = train::grad_check(n, anchors, views, layers, seed, tolerance).map_err(to_py)?;
    let blocks = PyDict::new(py);
    for b in &report.blocks {
        blocks.set_item(&b.block, b.max_rel_err)?;
    }
    let out = PyDict::new(py);
    out.set_item("passed", report.passed)?;
    out.set_item("blocks", blocks)?;
    Ok(out)
}

/// Runs a full experiment from a JSON configuration and returns the report
/// as JSON.
#[pyfunction]
fn run_experiment(py: Python<'_>, config_json: &str) -> PyResult<String> {
    let cfg: ExperimentConfig =
        serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(format!("bad config: {e}")))?;
    let report = py.detach(|| experiment::run_experiment(&cfg)).map_err(to_py)?;
    Ok(serde_json::to_string(&report).expect("report serializes"))
}

#[pymodule]
#[pyo3(name = "largemvc")]
pub fn largemvc_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(train_network, m)?)?;
    m.add_function(wrap_pyfunction!(kmeans, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(nmi, m)?)?;
    m.add_function(wrap_pyfunction!(ari, m)?)?;
    m.add_function(wrap_pyfunction!(soft_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(row_shrink, m)?)?;
    m.add_function(wrap_pyfunction!(procrustes, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
