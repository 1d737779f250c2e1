//! End-to-end experiments: build the data, fit the classic solver or train
//! the unfolded network, cluster the representation with k-means and score
//! it. Also hosts the linear-scaling benchmark and embedding export.
//!
//! Reports are deterministic per seed except for the wall-clock fields.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{accuracy, ari, kmeans, nmi, KMeansConfig};
use crate::data::{
    apply_missing, generate_synthetic, load_dataset, normalize_views, write_lines, write_matrix_csv,
    MultiViewDataset, Normalization, SynthSpec,
};
use crate::linalg::random_orthonormal;
use crate::solver::{solve, SolverConfig, ThresholdPlacement};
use crate::train::{backward, reconstruction_loss, train, TrainConfig, TrainHistory};
use crate::unfold::{forward, Checkpoint, RhoInit, UnfoldConfig, UnfoldParams, Variant};
use crate::{Mat, MvcError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    /// Generated per seed; the `SynthSpec` seed is replaced by the run seed.
    Synthetic(SynthSpec),
    Directory(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    Classic,
    Unfold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub source: DatasetSource,
    pub pipeline: Pipeline,
    pub variant: Variant,
    /// Anchor count as a multiple of the cluster count (1, 2 or 3).
    pub anchors_mult: usize,
    pub layers: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Sweep budget of the classic pipeline.
    pub solver_iters: usize,
    pub nonneg_h: bool,
    pub placement: Option<ThresholdPlacement>,
    /// Initial network thresholds θ and ρ.
    pub theta_init: f64,
    pub rho_init: RhoInit,
    pub train: TrainConfig,
    pub missing_rate: f64,
    pub normalization: Normalization,
    pub seeds: Vec<u64>,
    /// Worker threads for seed runs (0 = rayon default). Results do not
    /// depend on it.
    pub threads: usize,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            source: DatasetSource::Synthetic(SynthSpec::default()),
            pipeline: Pipeline::Unfold,
            variant: Variant::Largemvc,
            anchors_mult: 1,
            layers: 2,
            alpha: 1e-3,
            beta: 1e-3,
            solver_iters: 100,
            nonneg_h: true,
            placement: None,
            theta_init: 1e-2,
            rho_init: RhoInit::RowNormFraction(1.0),
            train: TrainConfig::default(),
            missing_rate: 0.0,
            normalization: Normalization::Zscore,
            seeds: (0..10).collect(),
            threads: 0,
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.anchors_mult) {
            return Err(MvcError::Config("anchors_mult must be 1, 2 or 3".into()));
        }
        if self.layers == 0 {
            return Err(MvcError::Config("layers must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(MvcError::Config("at least one seed is required".into()));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(MvcError::Config("missing_rate must lie in [0, 1)".into()));
        }
        if let DatasetSource::Synthetic(spec) = &self.source {
            spec.validate()?;
        }
        self.train.validate()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| MvcError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| MvcError::parse(path, e.to_string()))
    }

    fn unfold_config(&self, anchors: usize) -> UnfoldConfig {
        UnfoldConfig {
            layers: self.layers,
            anchors,
            variant: self.variant,
            nonneg_h: self.nonneg_h,
            recompute_anchors: true,
            placement: self.placement.unwrap_or(ThresholdPlacement::PerView),
            theta_init: self.theta_init,
            rho_init: self.rho_init,
        }
    }

    fn solver_config(&self, anchors: usize, seed: u64) -> SolverConfig {
        SolverConfig {
            alpha: self.alpha,
            beta: self.beta,
            anchors,
            max_iters: self.solver_iters,
            seed,
            nonneg_h: self.nonneg_h,
            placement: self.placement.unwrap_or(ThresholdPlacement::AfterAverage),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Metrics are `None` when the dataset has no labels.
    pub acc: Option<f64>,
    pub nmi: Option<f64>,
    pub ari: Option<f64>,
    /// Objective value (classic) or reconstruction loss (unfold).
    pub final_loss: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Population standard deviation over seeds.
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Some(Stat { mean, std: var.sqrt() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub acc: Option<Stat>,
    pub nmi: Option<Stat>,
    pub ari: Option<Stat>,
    pub final_loss: Option<Stat>,
    pub wall_seconds: Option<Stat>,
}

impl Aggregate {
    pub fn from_seeds(seeds: &[SeedResult]) -> Self {
        let collect = |f: &dyn Fn(&SeedResult) -> Option<f64>| -> Option<Stat> {
            let vals: Option<Vec<f64>> = seeds.iter().map(f).collect();
            vals.and_then(|v| Stat::of(&v))
        };
        Aggregate {
            acc: collect(&|s| s.acc),
            nmi: collect(&|s| s.nmi),
            ari: collect(&|s| s.ari),
            final_loss: collect(&|s| Some(s.final_loss)),
            wall_seconds: collect(&|s| Some(s.wall_seconds)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedResult>,
    pub aggregate: Aggregate,
    /// Set when the run aborted; `seeds` then holds the completed runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunReport {
    pub fn seeds_csv(&self) -> String {
        let fmt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:?}"));
        let mut out = String::from("seed,acc,nmi,ari,final_loss,wall_seconds\n");
        for s in &self.seeds {
            out.push_str(&format!(
                "{},{},{},{},{:?},{:?}\n",
                s.seed,
                fmt(s.acc),
                fmt(s.nmi),
                fmt(s.ari),
                s.final_loss,
                s.wall_seconds
            ));
        }
        out
    }

    /// Writes `report.json` and `seeds.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| MvcError::io(dir, e))?;
        let json = serde_json::to_string_pretty(self).expect("report serializes");
        let path = dir.join("report.json");
        fs::write(&path, json).map_err(|e| MvcError::io(&path, e))?;
        let path = dir.join("seeds.csv");
        fs::write(&path, self.seeds_csv()).map_err(|e| MvcError::io(&path, e))
    }
}

/// Everything one seed produced.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub result: SeedResult,
    pub dataset: MultiViewDataset,
    pub h: Mat,
    pub assignments: Vec<usize>,
    pub history: Option<TrainHistory>,
    pub checkpoint: Option<Checkpoint>,
}

/// Builds the (masked, normalized) dataset of one seed.
pub fn prepare_dataset(cfg: &ExperimentConfig, seed: u64, loaded: Option<&MultiViewDataset>) -> Result<MultiViewDataset> {
    let ds = match (&cfg.source, loaded) {
        (_, Some(ds)) => ds.clone(),
        (DatasetSource::Synthetic(spec), None) => generate_synthetic(&SynthSpec { seed, ..spec.clone() })?,
        (DatasetSource::Directory(dir), None) => load_dataset(dir)?,
    };
    let ds = if cfg.missing_rate > 0.0 {
        apply_missing(&ds, cfg.missing_rate, seed)?
    } else {
        ds
    };
    Ok(normalize_views(&ds, cfg.normalization))
}

/// Runs one seed end to end.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, loaded: Option<&MultiViewDataset>) -> Result<SeedRun> {
    let start = Instant::now();
    let ds = prepare_dataset(cfg, seed, loaded)?;
    let c = ds.n_clusters();
    let m = cfg.anchors_mult * c;
    let (h, final_loss, history, checkpoint) = match cfg.pipeline {
        Pipeline::Classic => {
            let state = solve(&ds, &cfg.solver_config(m, seed))?;
            let j = *state.objective_history.last().expect("non-empty history");
            (state.h, j, None, None)
        }
        Pipeline::Unfold => {
            let ucfg = cfg.unfold_config(m);
            let tcfg = TrainConfig { seed, ..cfg.train.clone() };
            let outcome = train(&ds, &ucfg, &tcfg)?;
            let trace = forward(&ds, &outcome.params, &outcome.p_init, &ucfg)?;
            let loss = reconstruction_loss(&ds, &trace)?;
            let ckpt = Checkpoint::new(&outcome.params, &ucfg, Some(&outcome.p_init));
            (trace.final_h().clone(), loss, Some(outcome.history), Some(ckpt))
        }
    };
    let fit = kmeans(&h, &KMeansConfig::new(c, seed))?;
    let (acc, nmi_v, ari_v) = match ds.labels() {
        Some(y) => (
            Some(accuracy(y, &fit.assignments)?),
            Some(nmi(y, &fit.assignments)?),
            Some(ari(y, &fit.assignments)?),
        ),
        None => (None, None, None),
    };
    Ok(SeedRun {
        result: SeedResult {
            seed,
            acc,
            nmi: nmi_v,
            ari: ari_v,
            final_loss,
            wall_seconds: start.elapsed().as_secs_f64(),
        },
        dataset: ds,
        h,
        assignments: fit.assignments,
        history,
        checkpoint,
    })
}

fn write_seed_artifacts(dir: &Path, run: &SeedRun) -> Result<()> {
    let seed = run.result.seed;
    export_embedding(&run.h, run.dataset.labels(), &dir.join(format!("embedding_seed{seed}.csv")))?;
    write_lines(&dir.join(format!("assignments_seed{seed}.txt")), &run.assignments)?;
    if let Some(hist) = &run.history {
        let path = dir.join(format!("history_seed{seed}.csv"));
        fs::write(&path, hist.to_csv()).map_err(|e| MvcError::io(&path, e))?;
    }
    if let Some(ckpt) = &run.checkpoint {
        ckpt.save(dir.join(format!("checkpoint_seed{seed}.json")))?;
    }
    Ok(())
}

/// Runs every seed (in parallel when `threads != 1`) and assembles the
/// report. With `out_dir` set, writes the report plus per-seed embeddings,
/// assignments, training histories and checkpoints. On failure the
/// completed seeds are still written before the error is returned.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let loaded = match &cfg.source {
        DatasetSource::Directory(dir) => Some(load_dataset(dir)?),
        DatasetSource::Synthetic(_) => None,
    };
    let work = || -> Vec<Result<SeedRun>> {
        cfg.seeds
            .par_iter()
            .map(|&seed| run_seed(cfg, seed, loaded.as_ref()))
            .collect()
    };
    let runs = if cfg.threads == 0 {
        work()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| MvcError::Config(format!("thread pool: {e}")))?
            .install(work)
    };

    let mut seeds = Vec::new();
    let mut first_error = None;
    for run in runs {
        match run {
            Ok(run) => {
                if let Some(dir) = &cfg.out_dir {
                    fs::create_dir_all(dir).map_err(|e| MvcError::io(dir, e))?;
                    write_seed_artifacts(dir, &run)?;
                }
                seeds.push(run.result);
            }
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    let report = RunReport {
        config: cfg.clone(),
        aggregate: Aggregate::from_seeds(&seeds),
        seeds,
        error: first_error.as_ref().map(|e| e.to_string()),
    };
    if let Some(dir) = &cfg.out_dir {
        report.write(dir)?;
    }
    match first_error {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

/// Size settings held fixed across the scaling benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub anchors: usize,
    pub views: usize,
    pub view_dim: usize,
    pub layers: usize,
    pub variant: Variant,
    /// Timed repetitions per size; the fastest is reported.
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            anchors: 10,
            views: 3,
            view_dim: 50,
            layers: 2,
            variant: Variant::Largemvc,
            repeats: 7,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub config: BenchConfig,
    pub sizes: Vec<usize>,
    /// Fastest seconds of one forward + backward epoch per size.
    pub seconds: Vec<f64>,
    /// Least-squares slope of `ln(seconds)` against `ln(n)`.
    pub slope: f64,
}

/// Least-squares slope of `ys` against `xs`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Times one training epoch (forward + backward) at every size with `m`,
/// `V`, `L` fixed and fits the log-log slope. Anchors start from a random
/// orthonormal draw; initialization is not part of the timing. Sizes are
/// timed round-robin so slow phases of the machine hit all of them, and
/// the fastest repetition per size is kept.
pub fn bench_scaling(cfg: &BenchConfig, sizes: &[usize]) -> Result<ScalingReport> {
    if sizes.len() < 4 {
        return Err(MvcError::Config(format!("need at least 4 sizes, got {}", sizes.len())));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MvcError::Config("sizes must be strictly increasing".into()));
    }
    if cfg.repeats == 0 || cfg.view_dim < cfg.anchors {
        return Err(MvcError::Config("need repeats >= 1 and view_dim >= anchors".into()));
    }
    let ucfg = UnfoldConfig {
        layers: cfg.layers,
        anchors: cfg.anchors,
        variant: cfg.variant,
        ..Default::default()
    };
    struct Case {
        ds: MultiViewDataset,
        params: UnfoldParams,
        p_init: Vec<Mat>,
    }
    let cases = sizes
        .iter()
        .map(|&n| {
            let spec = SynthSpec {
                n,
                n_views: cfg.views,
                n_clusters: cfg.anchors.max(2).min(n),
                latent_dim: cfg.anchors,
                view_dims: vec![cfg.view_dim; cfg.views],
                corrupt_row_fraction: 0.05,
                seed: cfg.seed,
                ..Default::default()
            };
            let ds = generate_synthetic(&spec)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let p_init = (0..cfg.views)
                .map(|_| random_orthonormal(cfg.anchors, cfg.view_dim, &mut rng))
                .collect();
            let params = UnfoldParams::init(&ucfg, &ds);
            Ok(Case { ds, params, p_init })
        })
        .collect::<Result<Vec<_>>>()?;
    let epoch = |c: &Case| -> Result<f64> {
        let start = Instant::now();
        let trace = forward(&c.ds, &c.params, &c.p_init, &ucfg)?;
        let grad = backward(&c.ds, &trace, &c.params, &ucfg)?;
        std::hint::black_box(grad);
        Ok(start.elapsed().as_secs_f64())
    };
    let mut seconds = vec![f64::INFINITY; sizes.len()];
    for round in 0..=cfg.repeats {
        for (k, case) in cases.iter().enumerate() {
            let t = epoch(case)?;
            if round > 0 {
                seconds[k] = seconds[k].min(t);
            }
        }
    }
    let xs: Vec<f64> = sizes.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = seconds.iter().map(|t| t.ln()).collect();
    Ok(ScalingReport {
        config: cfg.clone(),
        sizes: sizes.to_vec(),
        slope: fit_slope(&xs, &ys),
        seconds,
    })
}

/// Writes `H` as headerless CSV and, when labels are given, a sidecar
/// `<stem>.labels.txt` next to it. Returns the written paths.
pub fn export_embedding(h: &Mat, labels: Option<&[usize]>, path: &Path) -> Result<Vec<PathBuf>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| MvcError::io(parent, e))?;
    }
    write_matrix_csv(path, h)?;
    let mut written = vec![path.to_path_buf()];
    if let Some(y) = labels {
        if y.len() != h.nrows() {
            return Err(MvcError::Shape(format!("{} labels for {} rows", y.len(), h.nrows())));
        }
        let sidecar = path.with_extension("labels.txt");
        write_lines(&sidecar, y)?;
        written.push(sidecar);
    }
    Ok(written)
}
