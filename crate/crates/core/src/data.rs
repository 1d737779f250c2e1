//! Multi-view datasets: the in-memory model, the CSV directory format,
//! synthetic generation, missing-view masks and per-view normalization.
//!
//! A dataset directory holds a `meta.json` manifest and headerless CSV
//! files:
//!
//! ```json
//! {"n": 4, "V": 2, "c": 2, "dims": [2, 3],
//!  "views": ["view0.csv", "view1.csv"],
//!  "labels": "labels.txt", "masks": ["mask0.txt", "mask1.txt"]}
//! ```
//!
//! View files have `n` rows of `d_v` comma-separated floats, the labels
//! file has one integer per line and mask files one `0`/`1` per line.
//! `labels` and `masks` are optional.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::linalg::random_orthonormal;
use crate::{Mat, MvcError, Result};

/// `V` views of the same `n` samples, with optional ground truth and
/// observation masks. Rows of unobserved samples are kept at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewDataset {
    views: Vec<Mat>,
    labels: Option<Vec<usize>>,
    masks: Option<Vec<Vec<bool>>>,
    n_clusters: usize,
}

impl MultiViewDataset {
    /// Validates and builds a dataset. Rows of unobserved samples are
    /// zeroed. `n_clusters` must cover every label when labels are given.
    pub fn new(
        mut views: Vec<Mat>,
        labels: Option<Vec<usize>>,
        masks: Option<Vec<Vec<bool>>>,
        n_clusters: usize,
    ) -> Result<Self> {
        if views.is_empty() {
            return Err(MvcError::Dataset("at least one view is required".into()));
        }
        let n = views[0].nrows();
        if n == 0 {
            return Err(MvcError::Dataset("dataset has no samples".into()));
        }
        for (v, x) in views.iter().enumerate() {
            if x.nrows() != n {
                return Err(MvcError::Dataset(format!(
                    "row-count mismatch: view 0 has {n} rows, view {v} has {}",
                    x.nrows()
                )));
            }
            if x.ncols() == 0 {
                return Err(MvcError::Dataset(format!("view {v} has zero columns")));
            }
            if x.iter().any(|a| !a.is_finite()) {
                return Err(MvcError::Dataset(format!("view {v} has non-finite entries")));
            }
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(MvcError::Dataset(format!(
                    "row-count mismatch: {} labels for {n} samples",
                    labels.len()
                )));
            }
            let mut seen = vec![false; n_clusters];
            for (i, &y) in labels.iter().enumerate() {
                if y >= n_clusters {
                    return Err(MvcError::Dataset(format!(
                        "label out of range: sample {i} has label {y}, c = {n_clusters}"
                    )));
                }
                seen[y] = true;
            }
            if let Some(missing) = seen.iter().position(|s| !s) {
                return Err(MvcError::Dataset(format!(
                    "class {missing} has no samples"
                )));
            }
        }
        if let Some(masks) = &masks {
            if masks.len() != views.len() {
                return Err(MvcError::Dataset(format!(
                    "{} masks for {} views",
                    masks.len(),
                    views.len()
                )));
            }
            for (v, mask) in masks.iter().enumerate() {
                if mask.len() != n {
                    return Err(MvcError::Dataset(format!(
                        "row-count mismatch: mask {v} has {} rows, expected {n}",
                        mask.len()
                    )));
                }
            }
            if let Some(i) = (0..n).find(|&i| masks.iter().all(|m| !m[i])) {
                return Err(MvcError::Dataset(format!(
                    "fully missing sample: sample {i} is unobserved in every view"
                )));
            }
            for (x, mask) in views.iter_mut().zip(masks) {
                for (i, &seen) in mask.iter().enumerate() {
                    if !seen {
                        x.row_mut(i).fill(0.0);
                    }
                }
            }
        }
        Ok(MultiViewDataset {
            views,
            labels,
            masks,
            n_clusters,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.views[0].nrows()
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn dims(&self) -> Vec<usize> {
        self.views.iter().map(|x| x.ncols()).collect()
    }

    pub fn views(&self) -> &[Mat] {
        &self.views
    }

    pub fn view(&self, v: usize) -> &Mat {
        &self.views[v]
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn masks(&self) -> Option<&[Vec<bool>]> {
        self.masks.as_deref()
    }

    #[inline]
    pub fn is_observed(&self, view: usize, sample: usize) -> bool {
        self.masks.as_ref().is_none_or(|m| m[view][sample])
    }

    /// Number of views observing each sample.
    pub fn observed_counts(&self) -> Vec<usize> {
        (0..self.n_samples())
            .map(|i| (0..self.n_views()).filter(|&v| self.is_observed(v, i)).count())
            .collect()
    }

    /// Indices of the samples observed in `view`.
    pub fn observed_rows(&self, view: usize) -> Vec<usize> {
        (0..self.n_samples())
            .filter(|&i| self.is_observed(view, i))
            .collect()
    }

    /// Number of unobserved (sample, view) pairs.
    pub fn missing_count(&self) -> usize {
        self.masks
            .as_ref()
            .map_or(0, |m| m.iter().flatten().filter(|&&seen| !seen).count())
    }

    /// Zeroes the rows of `a` (an `n × k` matrix tied to `view`) that are
    /// unobserved in that view.
    pub(crate) fn mask_rows(&self, view: usize, a: &mut Mat) {
        if let Some(masks) = &self.masks {
            for (i, &seen) in masks[view].iter().enumerate() {
                if !seen {
                    a.row_mut(i).fill(0.0);
                }
            }
        }
    }

    /// Same dataset with the given label vector (validated).
    pub fn with_labels(self, labels: Vec<usize>, n_clusters: usize) -> Result<Self> {
        MultiViewDataset::new(self.views, Some(labels), self.masks, n_clusters)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    n: usize,
    #[serde(rename = "V")]
    n_views: usize,
    c: usize,
    dims: Vec<usize>,
    views: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    masks: Option<Vec<String>>,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| MvcError::io(path, e))
}

fn read_matrix_csv(path: &Path) -> Result<Mat> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| MvcError::parse(path, e.to_string()))?;
    let mut data = Vec::new();
    let mut rows = 0;
    let mut cols = None;
    for record in reader.records() {
        let record = record.map_err(|e| MvcError::parse(path, e.to_string()))?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(MvcError::parse(
                    path,
                    format!("row {rows} has {} fields, expected {c}", record.len()),
                ))
            }
            _ => {}
        }
        for field in record.iter() {
            let x: f64 = field
                .parse()
                .map_err(|_| MvcError::parse(path, format!("row {rows}: bad number {field:?}")))?;
            data.push(x);
        }
        rows += 1;
    }
    Ok(Mat::from_row_slice(rows, cols.unwrap_or(0), &data))
}

fn read_lines<T>(path: &Path, parse: impl Fn(&str) -> Option<T>) -> Result<Vec<T>> {
    read_text(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, l)| parse(l).ok_or_else(|| MvcError::parse(path, format!("line {}: {l:?}", i + 1))))
        .collect()
}

/// Loads a dataset directory (see the module docs for the layout).
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<MultiViewDataset> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.json");
    let meta: Manifest = serde_json::from_str(&read_text(&meta_path)?)
        .map_err(|e| MvcError::parse(&meta_path, e.to_string()))?;
    if meta.views.len() != meta.n_views || meta.dims.len() != meta.n_views {
        return Err(MvcError::parse(
            &meta_path,
            format!(
                "V = {} but {} view files and {} dims",
                meta.n_views,
                meta.views.len(),
                meta.dims.len()
            ),
        ));
    }
    let mut views = Vec::with_capacity(meta.n_views);
    for (v, (file, &d)) in meta.views.iter().zip(&meta.dims).enumerate() {
        let x = read_matrix_csv(&dir.join(file))?;
        if x.nrows() != meta.n {
            return Err(MvcError::Dataset(format!(
                "row-count mismatch: view {v} ({file}) has {} rows, meta says n = {}",
                x.nrows(),
                meta.n
            )));
        }
        if x.ncols() != d {
            return Err(MvcError::Dataset(format!(
                "view {v} ({file}) has {} columns, meta says {d}",
                x.ncols()
            )));
        }
        views.push(x);
    }
    let labels = meta
        .labels
        .as_ref()
        .map(|f| read_lines(&dir.join(f), |l| l.parse::<usize>().ok()))
        .transpose()?;
    let masks = match &meta.masks {
        Some(files) => {
            if files.len() != meta.n_views {
                return Err(MvcError::parse(&meta_path, "one mask file per view is required"));
            }
            let masks = files
                .iter()
                .map(|f| {
                    read_lines(&dir.join(f), |l| match l {
                        "0" => Some(false),
                        "1" => Some(true),
                        _ => None,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Some(masks)
        }
        None => None,
    };
    MultiViewDataset::new(views, labels, masks, meta.c)
}

/// Writes a matrix as headerless CSV using Rust's shortest round-trip float
/// formatting.
pub fn write_matrix_csv(path: &Path, a: &Mat) -> Result<()> {
    let mut out = String::with_capacity(a.nrows() * a.ncols() * 12);
    for row in a.row_iter() {
        let fields: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| MvcError::io(path, e))
}

/// Reads a headerless CSV matrix.
pub fn read_matrix(path: impl AsRef<Path>) -> Result<Mat> {
    read_matrix_csv(path.as_ref())
}

/// Reads a file of one nonnegative integer per line.
pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    read_lines(path.as_ref(), |l| l.parse::<usize>().ok())
}

pub(crate) fn write_lines<T: std::fmt::Display>(path: &Path, items: &[T]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| MvcError::io(path, e))?;
    for item in items {
        writeln!(f, "{item}").map_err(|e| MvcError::io(path, e))?;
    }
    Ok(())
}

/// Writes `ds` in the directory format understood by [`load_dataset`].
pub fn save_dataset(ds: &MultiViewDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| MvcError::io(dir, e))?;
    let mut views = Vec::new();
    for (v, x) in ds.views().iter().enumerate() {
        let name = format!("view{v}.csv");
        write_matrix_csv(&dir.join(&name), x)?;
        views.push(name);
    }
    let labels = match ds.labels() {
        Some(y) => {
            write_lines(&dir.join("labels.txt"), y)?;
            Some("labels.txt".to_string())
        }
        None => None,
    };
    let masks = match ds.masks() {
        Some(masks) => {
            let mut names = Vec::new();
            for (v, mask) in masks.iter().enumerate() {
                let name = format!("mask{v}.txt");
                let bits: Vec<u8> = mask.iter().map(|&b| b as u8).collect();
                write_lines(&dir.join(&name), &bits)?;
                names.push(name);
            }
            Some(names)
        }
        None => None,
    };
    let meta = Manifest {
        n: ds.n_samples(),
        n_views: ds.n_views(),
        c: ds.n_clusters(),
        dims: ds.dims(),
        views,
        labels,
        masks,
    };
    let path = dir.join("meta.json");
    let text = serde_json::to_string_pretty(&meta).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| MvcError::io(&path, e))
}

/// Parameters of the synthetic multi-view generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n: usize,
    pub n_views: usize,
    pub n_clusters: usize,
    pub latent_dim: usize,
    pub view_dims: Vec<usize>,
    /// Distance scale between cluster means, in units of `noise_std`
    /// (in absolute units when `noise_std` is zero).
    pub cluster_separation: f64,
    pub noise_std: f64,
    pub corrupt_row_fraction: f64,
    pub corrupt_magnitude: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n: 1000,
            n_views: 3,
            n_clusters: 5,
            latent_dim: 5,
            view_dims: vec![20, 30, 40],
            cluster_separation: 10.0,
            noise_std: 1.0,
            corrupt_row_fraction: 0.0,
            corrupt_magnitude: 5.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(MvcError::Config(msg));
        if self.n_clusters < 2 || self.n < self.n_clusters {
            return bad(format!("need n >= c >= 2, got n = {}, c = {}", self.n, self.n_clusters));
        }
        if self.n_views == 0 || self.view_dims.len() != self.n_views {
            return bad(format!(
                "V = {} but {} view dims",
                self.n_views,
                self.view_dims.len()
            ));
        }
        if self.latent_dim == 0 || self.view_dims.contains(&0) {
            return bad("all dimensions must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.corrupt_row_fraction) {
            return bad("corrupt_row_fraction must lie in [0, 1]".into());
        }
        if !(self.noise_std >= 0.0 && self.cluster_separation >= 0.0 && self.corrupt_magnitude >= 0.0)
        {
            return bad("noise_std, cluster_separation and corrupt_magnitude must be >= 0".into());
        }
        Ok(())
    }
}

/// Output of [`generate_synthetic_with_latent`].
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: MultiViewDataset,
    /// The `n × latent_dim` latent points every view was generated from.
    pub latent: Mat,
}

/// Generates a labelled multi-view dataset (see [`generate_synthetic_with_latent`]).
pub fn generate_synthetic(spec: &SynthSpec) -> Result<MultiViewDataset> {
    generate_synthetic_with_latent(spec).map(|s| s.dataset)
}

/// Draws a dataset with a planted anchor structure:
///
/// 1. nonnegative cluster means in latent space, pairwise at least
///    `cluster_separation · noise_std` apart (one-hot directions when
///    `latent_dim ≥ c`);
/// 2. latent points `z_i = μ_{y_i} + noise_std · ε`;
/// 3. every view is `X_v = Z A_v + noise_std · ε` with `A_v` a random
///    orthonormal map, so `X_v` has the exact form `H P_v` when noise is 0;
/// 4. `corrupt_row_fraction · n` rows per view are replaced by Student-t
///    (3 dof) noise scaled by `corrupt_magnitude`.
///
/// The result is a pure function of `spec`.
pub fn generate_synthetic_with_latent(spec: &SynthSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, c, k) = (spec.n, spec.n_clusters, spec.latent_dim);
    let scale = if spec.noise_std > 0.0 {
        spec.cluster_separation * spec.noise_std
    } else {
        spec.cluster_separation
    };

    let means = cluster_means(c, k, scale, &mut rng);

    let mut labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    labels.shuffle(&mut rng);

    let mut latent = Mat::zeros(n, k);
    for (i, &y) in labels.iter().enumerate() {
        for j in 0..k {
            let eps: f64 = rng.sample(StandardNormal);
            latent[(i, j)] = means[(y, j)] + spec.noise_std * eps;
        }
    }

    let heavy = StudentT::new(3.0).expect("valid dof");
    let mut views = Vec::with_capacity(spec.n_views);
    for &d in &spec.view_dims {
        let map = random_orthonormal(k, d, &mut rng);
        let mut x = &latent * &map;
        if spec.noise_std > 0.0 {
            let noise = Normal::new(0.0, spec.noise_std).expect("valid std");
            for i in 0..n {
                for j in 0..d {
                    x[(i, j)] += noise.sample(&mut rng);
                }
            }
        }
        let n_corrupt = (spec.corrupt_row_fraction * n as f64).round() as usize;
        if n_corrupt > 0 {
            let mut rows = index::sample(&mut rng, n, n_corrupt).into_vec();
            rows.sort_unstable();
            for i in rows {
                for j in 0..d {
                    x[(i, j)] = spec.corrupt_magnitude * heavy.sample(&mut rng);
                }
            }
        }
        views.push(x);
    }

    let dataset = MultiViewDataset::new(views, Some(labels), None, c)?;
    Ok(SyntheticData { dataset, latent })
}

fn cluster_means<R: Rng>(c: usize, k: usize, scale: f64, rng: &mut R) -> Mat {
    let mut means = Mat::zeros(c, k);
    if k >= c {
        for a in 0..c {
            means[(a, a)] = scale;
        }
        return means;
    }
    // Fewer latent dims than clusters: rejection-sample a spread-out set of
    // nonnegative points in a box large enough to host them.
    let side = scale * (c as f64).powf(1.0 / k as f64) * 2.0;
    let mut placed = 0;
    let mut attempts = 0;
    while placed < c {
        let candidate: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * side).collect();
        let min_gap = if attempts > 10_000 { 0.0 } else { scale };
        let ok = (0..placed).all(|b| {
            let dist2: f64 = (0..k).map(|j| (means[(b, j)] - candidate[j]).powi(2)).sum();
            dist2.sqrt() >= min_gap
        });
        if ok {
            for (j, x) in candidate.into_iter().enumerate() {
                means[(placed, j)] = x;
            }
            placed += 1;
        }
        attempts += 1;
    }
    means
}

/// Marks about `rate · n · V` (sample, view) pairs as unobserved, uniformly
/// at random, while every sample keeps at least one observed view.
/// Unobserved rows are zeroed. Existing masks are respected and extended.
///
/// Requests above what the constraint allows are clamped with a warning.
pub fn apply_missing(ds: &MultiViewDataset, rate: f64, seed: u64) -> Result<MultiViewDataset> {
    if !(0.0..1.0).contains(&rate) {
        return Err(MvcError::Config(format!("missing rate must lie in [0, 1), got {rate}")));
    }
    let (n, n_views) = (ds.n_samples(), ds.n_views());
    if rate == 0.0 {
        return Ok(ds.clone());
    }
    if n_views < 2 {
        return Err(MvcError::Config("missing views need V >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masks: Vec<Vec<bool>> = match ds.masks() {
        Some(m) => m.to_vec(),
        None => vec![vec![true; n]; n_views],
    };

    let requested = (rate * (n * n_views) as f64).round() as usize;
    let already = ds.missing_count();
    let mut wanted = requested.saturating_sub(already);

    // One protected view per sample; everything else is a candidate.
    let mut candidates = Vec::new();
    for i in 0..n {
        let observed: Vec<usize> = (0..n_views).filter(|&v| masks[v][i]).collect();
        let keep = observed[rng.random_range(0..observed.len())];
        candidates.extend(observed.into_iter().filter(|&v| v != keep).map(|v| (i, v)));
    }
    if wanted > candidates.len() {
        log::warn!(
            "missing rate {rate} asks for {requested} unobserved entries; at most {} are \
             possible while keeping one view per sample, clamping",
            already + candidates.len()
        );
        wanted = candidates.len();
    }
    for pos in index::sample(&mut rng, candidates.len(), wanted) {
        let (i, v) = candidates[pos];
        masks[v][i] = false;
    }
    MultiViewDataset::new(
        ds.views.clone(),
        ds.labels.clone(),
        Some(masks),
        ds.n_clusters,
    )
}

/// Per-view feature normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    None,
    /// Column mean 0 / std 1 over observed rows; constant columns keep std 1.
    #[default]
    Zscore,
    /// Every observed row scaled to unit ℓ2 norm; zero rows stay zero.
    UnitRow,
}

pub fn normalize_views(ds: &MultiViewDataset, mode: Normalization) -> MultiViewDataset {
    let mut out = ds.clone();
    match mode {
        Normalization::None => {}
        Normalization::Zscore => {
            for (v, x) in out.views.iter_mut().enumerate() {
                let rows = ds.observed_rows(v);
                let count = rows.len() as f64;
                for mut col in x.column_iter_mut() {
                    let mean = rows.iter().map(|&i| col[i]).sum::<f64>() / count;
                    let var = rows.iter().map(|&i| (col[i] - mean).powi(2)).sum::<f64>() / count;
                    let std = if var > 0.0 { var.sqrt() } else { 1.0 };
                    for &i in &rows {
                        col[i] = (col[i] - mean) / std;
                    }
                }
            }
        }
        Normalization::UnitRow => {
            for x in out.views.iter_mut() {
                for mut row in x.row_iter_mut() {
                    let norm = row.norm();
                    if norm > 0.0 {
                        row /= norm;
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn small() -> MultiViewDataset {
        MultiViewDataset::new(
            vec![Mat::from_fn(4, 2, |i, j| (i + j) as f64), Mat::from_fn(4, 3, |i, j| (i * j) as f64)],
            Some(vec![0, 0, 1, 1]),
            None,
            2,
        )
        .unwrap()
    }

    #[test]
    fn row_count_mismatch_rejected() {
        let err = MultiViewDataset::new(vec![Mat::zeros(4, 2), Mat::zeros(3, 2)], None, None, 2)
            .unwrap_err();
        assert!(err.to_string().contains("row-count mismatch"));
    }

    #[test]
    fn fully_missing_sample_rejected() {
        let masks = vec![vec![true, true, false, true], vec![true, false, false, true]];
        let err = MultiViewDataset::new(vec![Mat::zeros(4, 2), Mat::zeros(4, 2)], None, Some(masks), 2)
            .unwrap_err();
        assert!(err.to_string().contains("fully missing sample"));
    }

    #[test]
    fn labels_must_cover_classes() {
        let err = MultiViewDataset::new(vec![Mat::zeros(3, 1)], Some(vec![0, 0, 2]), None, 3);
        assert!(err.unwrap_err().to_string().contains("class 1"));
        let err = MultiViewDataset::new(vec![Mat::zeros(3, 1)], Some(vec![0, 1, 3]), None, 2);
        assert!(err.unwrap_err().to_string().contains("label out of range"));
    }

    #[test]
    fn unobserved_rows_are_zeroed() {
        let masks = vec![vec![true, false], vec![true, true]];
        let ds = MultiViewDataset::new(vec![Mat::repeat(2, 2, 1.0), Mat::repeat(2, 2, 1.0)], None, Some(masks), 1)
            .unwrap();
        assert_eq!(ds.view(0).row(1).sum(), 0.0);
        assert_eq!(ds.view(1).row(1).sum(), 2.0);
        assert_eq!(ds.observed_counts(), vec![2, 1]);
    }

    #[test]
    fn synthetic_is_deterministic() {
        let spec = SynthSpec { n: 50, seed: 3, corrupt_row_fraction: 0.1, ..Default::default() };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SynthSpec { seed: 4, ..spec }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noise_free_views_have_latent_rank() {
        let spec = SynthSpec {
            n: 60,
            n_views: 2,
            n_clusters: 3,
            latent_dim: 3,
            view_dims: vec![7, 9],
            noise_std: 0.0,
            corrupt_row_fraction: 0.0,
            seed: 11,
            ..Default::default()
        };
        let ds = generate_synthetic(&spec).unwrap();
        for x in ds.views() {
            assert!(x.rank(1e-9) <= 3);
        }
    }

    #[test]
    fn corruption_hits_requested_row_count() {
        let spec = SynthSpec { n: 100, corrupt_row_fraction: 0.2, noise_std: 0.0, seed: 5, ..Default::default() };
        let clean = generate_synthetic(&SynthSpec { corrupt_row_fraction: 0.0, ..spec.clone() }).unwrap();
        let dirty = generate_synthetic(&spec).unwrap();
        // Corruption draws come after the clean part of each view, so clean
        // rows of view 0 coincide.
        let changed = (0..100)
            .filter(|&i| clean.view(0).row(i) != dirty.view(0).row(i))
            .count();
        assert_eq!(changed, 20);
    }

    #[test]
    fn missing_rate_zero_is_identity() {
        let ds = small();
        assert_eq!(apply_missing(&ds, 0.0, 1).unwrap(), ds);
    }

    #[test]
    fn missing_rate_errors() {
        let ds = small();
        assert!(apply_missing(&ds, 1.0, 1).is_err());
        assert!(apply_missing(&ds, -0.1, 1).is_err());
        let single = MultiViewDataset::new(vec![Mat::zeros(3, 1)], None, None, 1).unwrap();
        assert!(apply_missing(&single, 0.3, 1).is_err());
    }

    #[test]
    fn missing_half_of_two_views() {
        let ds = generate_synthetic(&SynthSpec {
            n: 100,
            n_views: 2,
            view_dims: vec![6, 6],
            seed: 2,
            ..Default::default()
        })
        .unwrap();
        let masked = apply_missing(&ds, 0.5, 1).unwrap();
        assert!(masked.observed_counts().iter().all(|&k| k >= 1));
        assert_eq!(masked.missing_count(), 100);
    }

    #[test]
    fn infeasible_missing_rate_is_clamped() {
        let ds = generate_synthetic(&SynthSpec {
            n: 40,
            n_views: 2,
            view_dims: vec![6, 6],
            seed: 2,
            ..Default::default()
        })
        .unwrap();
        let masked = apply_missing(&ds, 0.9, 7).unwrap();
        assert_eq!(masked.missing_count(), 40);
        assert!(masked.observed_counts().iter().all(|&k| k == 1));
    }

    #[test]
    fn normalization_closed_forms() {
        let ds = MultiViewDataset::new(vec![dmatrix![2.0, 3.0; 4.0, 4.0]], None, None, 1).unwrap();
        assert_eq!(normalize_views(&ds, Normalization::None), ds);
        let z = normalize_views(&ds, Normalization::Zscore);
        assert_eq!(z.view(0).column(0).iter().copied().collect::<Vec<_>>(), vec![-1.0, 1.0]);
        let u = normalize_views(&ds, Normalization::UnitRow);
        assert!((u.view(0)[(0, 0)] - 2.0 / 13f64.sqrt()).abs() < 1e-15);
        let r = MultiViewDataset::new(vec![dmatrix![3.0, 4.0; 0.0, 0.0]], None, None, 1).unwrap();
        let r = normalize_views(&r, Normalization::UnitRow);
        assert_eq!(r.view(0), &dmatrix![0.6, 0.8; 0.0, 0.0]);
    }

    #[test]
    fn zscore_ignores_unobserved_rows() {
        let ds = generate_synthetic(&SynthSpec { n: 80, seed: 9, ..Default::default() }).unwrap();
        let ds = apply_missing(&ds, 0.4, 3).unwrap();
        let z = normalize_views(&ds, Normalization::Zscore);
        for v in 0..z.n_views() {
            let rows = z.observed_rows(v);
            for col in z.view(v).column_iter() {
                let mean = rows.iter().map(|&i| col[i]).sum::<f64>() / rows.len() as f64;
                assert!(mean.abs() <= 1e-12);
            }
            for i in 0..z.n_samples() {
                if !z.is_observed(v, i) {
                    assert!(z.view(v).row(i).iter().all(|&x| x == 0.0));
                }
            }
        }
    }
}
