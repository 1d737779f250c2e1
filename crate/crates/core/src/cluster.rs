//! k-means clustering and external clustering metrics.
//!
//! NMI is normalized by the arithmetic mean of the two entropies. Two
//! single-cluster partitions score NMI 1 (0/0 convention).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Mat, MvcError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    /// Stop when the relative inertia change drops below this.
    pub tol: f64,
    pub n_init: usize,
    pub seed: u64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansConfig {
            k,
            max_iters: 100,
            tol: 1e-6,
            n_init: 10,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringResult {
    pub assignments: Vec<usize>,
    /// `k × dim`
    pub centroids: Mat,
    pub inertia: f64,
    /// Inertia after every Lloyd iteration of the winning restart.
    pub inertia_trace: Vec<f64>,
}

/// Row-major copy of the points; Lloyd iterations touch whole rows.
struct Points {
    data: Vec<f64>,
    n: usize,
    dim: usize,
}

impl Points {
    fn new(m: &Mat) -> Self {
        let (n, dim) = m.shape();
        let mut data = Vec::with_capacity(n * dim);
        for i in 0..n {
            data.extend(m.row(i).iter());
        }
        Points { data, n, dim }
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

#[inline]
fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with k-means++ seeding and `n_init` restarts; the
/// restart with the lowest inertia wins (earliest restart on ties). Empty
/// clusters are re-seeded with the point farthest from its centroid.
pub fn kmeans(points: &Mat, cfg: &KMeansConfig) -> Result<ClusteringResult> {
    let n = points.nrows();
    if cfg.k == 0 {
        return Err(MvcError::Config("k-means needs k >= 1".into()));
    }
    if cfg.k > n {
        return Err(MvcError::Config(format!("k = {} exceeds n = {n}", cfg.k)));
    }
    if points.iter().any(|x| !x.is_finite()) {
        return Err(MvcError::Numerical("k-means input has non-finite entries".into()));
    }
    let pts = Points::new(points);
    let mut best: Option<(Vec<usize>, Vec<f64>, f64, Vec<f64>)> = None;
    for restart in 0..cfg.n_init.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(restart as u64));
        let run = lloyd(&pts, cfg, &mut rng);
        if best.as_ref().is_none_or(|b| run.2 < b.2) {
            best = Some(run);
        }
    }
    let (assignments, centroids, inertia, inertia_trace) = best.expect("at least one restart");
    Ok(ClusteringResult {
        assignments,
        centroids: Mat::from_row_slice(cfg.k, pts.dim, &centroids),
        inertia,
        inertia_trace,
    })
}

fn plus_plus_seed<R: Rng>(pts: &Points, k: usize, rng: &mut R) -> Vec<f64> {
    let mut centroids = Vec::with_capacity(k * pts.dim);
    let first = rng.random_range(0..pts.n);
    centroids.extend_from_slice(pts.row(first));
    let mut d2: Vec<f64> = (0..pts.n).map(|i| dist2(pts.row(i), pts.row(first))).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = pts.n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..pts.n)
        };
        let start = centroids.len();
        centroids.extend_from_slice(pts.row(pick));
        let c = &centroids[start..];
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(dist2(pts.row(i), c));
        }
    }
    centroids
}

fn assign(pts: &Points, centroids: &[f64], k: usize, labels: &mut [usize], d2: &mut [f64]) -> f64 {
    let mut inertia = 0.0;
    for i in 0..pts.n {
        let p = pts.row(i);
        let (mut best, mut best_d) = (0, f64::INFINITY);
        for c in 0..k {
            let d = dist2(p, &centroids[c * pts.dim..(c + 1) * pts.dim]);
            if d < best_d {
                best = c;
                best_d = d;
            }
        }
        labels[i] = best;
        d2[i] = best_d;
        inertia += best_d;
    }
    inertia
}

fn lloyd<R: Rng>(pts: &Points, cfg: &KMeansConfig, rng: &mut R) -> (Vec<usize>, Vec<f64>, f64, Vec<f64>) {
    let (k, dim) = (cfg.k, pts.dim);
    let mut centroids = plus_plus_seed(pts, k, rng);
    let mut labels = vec![0; pts.n];
    let mut d2 = vec![0.0; pts.n];
    let mut inertia = assign(pts, &centroids, k, &mut labels, &mut d2);
    let mut trace = vec![inertia];

    for _ in 0..cfg.max_iters {
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..pts.n {
            let c = labels[i];
            counts[c] += 1;
            for (s, x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(pts.row(i)) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centroids[c * dim..(c + 1) * dim].iter_mut().zip(&sums[c * dim..]) {
                    *dst = s * inv;
                }
            } else {
                // Re-seed from the farthest point and make sure it is not
                // picked twice.
                let far = (0..pts.n)
                    .max_by(|&a, &b| d2[a].total_cmp(&d2[b]).then(b.cmp(&a)))
                    .expect("n >= 1");
                centroids[c * dim..(c + 1) * dim].copy_from_slice(pts.row(far));
                d2[far] = 0.0;
            }
        }
        let next = assign(pts, &centroids, k, &mut labels, &mut d2);
        trace.push(next);
        let change = (inertia - next).abs() / inertia.max(f64::MIN_POSITIVE);
        inertia = next;
        if change < cfg.tol {
            break;
        }
    }
    (labels, centroids, inertia, trace)
}

fn check_labels(y_true: &[usize], y_pred: &[usize]) -> Result<()> {
    if y_true.len() != y_pred.len() {
        return Err(MvcError::Shape(format!(
            "label vectors differ in length: {} vs {}",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(MvcError::Shape("empty label vectors".into()));
    }
    Ok(())
}

/// Contingency table `counts[a][b]` = #samples with true label `a` and
/// predicted label `b`.
fn contingency(y_true: &[usize], y_pred: &[usize]) -> Vec<Vec<usize>> {
    let rows = y_true.iter().max().map_or(0, |&m| m + 1);
    let cols = y_pred.iter().max().map_or(0, |&m| m + 1);
    let mut table = vec![vec![0usize; cols]; rows];
    for (&a, &b) in y_true.iter().zip(y_pred) {
        table[a][b] += 1;
    }
    table
}

/// Clustering accuracy under the best one-to-one label matching.
pub fn accuracy(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    check_labels(y_true, y_pred)?;
    let table = contingency(y_true, y_pred);
    let size = table.len().max(table[0].len());
    let max_count = table.iter().flatten().copied().max().unwrap_or(0) as f64;
    // Square cost matrix; padding rows/columns cost the same everywhere.
    let mut cost = vec![vec![max_count; size]; size];
    for (a, row) in table.iter().enumerate() {
        for (b, &count) in row.iter().enumerate() {
            cost[a][b] = max_count - count as f64;
        }
    }
    let matching = hungarian(&cost);
    let matched: usize = matching
        .iter()
        .enumerate()
        .filter(|&(a, &b)| a < table.len() && b < table[a].len())
        .map(|(a, &b)| table[a][b])
        .sum();
    Ok(matched as f64 / y_true.len() as f64)
}

/// Minimum-cost perfect matching on a square cost matrix (Kuhn–Munkres with
/// potentials, O(n³)). Returns `assignment[row] = col`.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // 1-based arrays; index 0 is the virtual column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for col in 1..=n {
                if !used[col] {
                    let reduced = cost[r - 1][col - 1] - u[r] - v[col];
                    if reduced < minv[col] {
                        minv[col] = reduced;
                        way[col] = col0;
                    }
                    if minv[col] < delta {
                        delta = minv[col];
                        col1 = col;
                    }
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[owner[col]] += delta;
                    v[col] -= delta;
                } else {
                    minv[col] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            owner[col0] = owner[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for col in 1..=n {
        if owner[col] > 0 {
            assignment[owner[col] - 1] = col - 1;
        }
    }
    assignment
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information, arithmetic-mean normalization.
pub fn nmi(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    check_labels(y_true, y_pred)?;
    let n = y_true.len() as f64;
    let table = contingency(y_true, y_pred);
    let row_sums: Vec<usize> = table.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<usize> = (0..table[0].len())
        .map(|b| table.iter().map(|r| r[b]).sum())
        .collect();
    let h_true = entropy(row_sums.iter().copied(), n);
    let h_pred = entropy(col_sums.iter().copied(), n);
    if h_true == 0.0 && h_pred == 0.0 {
        return Ok(1.0);
    }
    let mut mi = 0.0;
    for (a, row) in table.iter().enumerate() {
        for (b, &count) in row.iter().enumerate() {
            if count > 0 {
                let pab = count as f64 / n;
                mi += pab * (count as f64 * n / (row_sums[a] * col_sums[b]) as f64).ln();
            }
        }
    }
    let denom = 0.5 * (h_true + h_pred);
    Ok((mi / denom).clamp(0.0, 1.0))
}

#[inline]
fn pairs(x: usize) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index from the contingency table. Returns 1 when both
/// partitions are trivial in the same way (expected index equals maximum).
pub fn ari(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    check_labels(y_true, y_pred)?;
    let table = contingency(y_true, y_pred);
    let index: f64 = table.iter().flatten().map(|&c| pairs(c)).sum();
    let sum_rows: f64 = table.iter().map(|r| pairs(r.iter().sum())).sum();
    let sum_cols: f64 = (0..table[0].len())
        .map(|b| pairs(table.iter().map(|r| r[b]).sum()))
        .sum();
    let total = pairs(y_true.len());
    let expected = if total > 0.0 { sum_rows * sum_cols / total } else { 0.0 };
    let max_index = 0.5 * (sum_rows + sum_cols);
    if max_index == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max_index - expected))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn separable_points() {
        let pts = dmatrix![0.0; 0.0; 10.0; 10.0];
        let res = kmeans(&pts, &KMeansConfig::new(2, 1)).unwrap();
        let mut c: Vec<f64> = res.centroids.iter().copied().collect();
        c.sort_by(f64::total_cmp);
        assert_eq!(c, vec![0.0, 10.0]);
        assert_eq!(res.inertia, 0.0);
        assert_eq!(res.assignments[0], res.assignments[1]);
        assert_ne!(res.assignments[0], res.assignments[2]);
    }

    #[test]
    fn single_cluster_is_mean() {
        let pts = dmatrix![1.0, 0.0; 3.0, 2.0; 5.0, 4.0];
        let res = kmeans(&pts, &KMeansConfig::new(1, 0)).unwrap();
        assert!((res.centroids[(0, 0)] - 3.0).abs() < 1e-12);
        assert!((res.centroids[(0, 1)] - 2.0).abs() < 1e-12);
        // total variance · n = 8 + 8
        assert!((res.inertia - 16.0).abs() < 1e-12);
    }

    #[test]
    fn one_cluster_per_point() {
        let pts = dmatrix![0.0, 1.0; 2.0, 3.0; -1.0, 4.0; 7.0, 7.0];
        let res = kmeans(&pts, &KMeansConfig::new(4, 5)).unwrap();
        assert_eq!(res.inertia, 0.0);
    }

    #[test]
    fn k_larger_than_n_rejected() {
        assert!(kmeans(&Mat::zeros(2, 1), &KMeansConfig::new(3, 0)).is_err());
    }

    #[test]
    fn kmeans_deterministic() {
        let pts = Mat::from_fn(40, 3, |i, j| ((i * 7 + j * 3) % 11) as f64);
        let cfg = KMeansConfig::new(4, 9);
        assert_eq!(kmeans(&pts, &cfg).unwrap(), kmeans(&pts, &cfg).unwrap());
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap(), 0.5);
        assert_eq!(accuracy(&[2, 0, 1], &[2, 0, 1]).unwrap(), 1.0);
        // more predicted clusters than true ones
        assert_eq!(accuracy(&[0, 0, 0, 1], &[0, 1, 2, 3]).unwrap(), 0.5);
    }

    #[test]
    fn metric_errors() {
        assert!(accuracy(&[0, 1], &[0]).is_err());
        assert!(nmi(&[], &[]).is_err());
        assert!(ari(&[0], &[0, 0]).is_err());
    }

    #[test]
    fn nmi_examples() {
        assert!((nmi(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(nmi(&[0, 0, 1, 1], &[0, 0, 0, 0]).unwrap(), 0.0);
        assert_eq!(nmi(&[0, 0, 0], &[1, 1, 1]).unwrap(), 1.0);
    }

    #[test]
    fn ari_examples() {
        assert!((ari(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap() - 1.0).abs() < 1e-12);
        assert!((ari(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hungarian_small() {
        let cost = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        let a = hungarian(&cost);
        let total: f64 = a.iter().enumerate().map(|(r, &c)| cost[r][c]).sum();
        assert_eq!(total, 5.0);
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for perm in permutations(n - 1) {
            for pos in 0..n {
                let mut p = perm.clone();
                p.insert(pos, n - 1);
                out.push(p);
            }
        }
        out
    }

    proptest::proptest! {
        #[test]
        fn hungarian_is_optimal(n in 1usize..6, values in proptest::collection::vec(0.0f64..10.0, 36)) {
            let cost: Vec<Vec<f64>> = (0..n).map(|i| values[i * 6..i * 6 + n].to_vec()).collect();
            let a = hungarian(&cost);
            let mut seen = a.clone();
            seen.sort_unstable();
            proptest::prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
            let total: f64 = a.iter().enumerate().map(|(r, &c)| cost[r][c]).sum();
            let best = permutations(n)
                .iter()
                .map(|p| p.iter().enumerate().map(|(r, &c)| cost[r][c]).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            proptest::prop_assert!((total - best).abs() < 1e-9);
        }

        #[test]
        fn accuracy_invariant_to_relabeling(labels in proptest::collection::vec(0usize..4, 1..40), shift in 0usize..4) {
            let relabeled: Vec<usize> = labels.iter().map(|&l| (l + shift) % 4).collect();
            proptest::prop_assert!((accuracy(&labels, &relabeled).unwrap() - 1.0).abs() < 1e-12);
            proptest::prop_assert!((nmi(&labels, &relabeled).unwrap() - 1.0).abs() < 1e-9 || labels.iter().all(|&l| l == labels[0]));
        }
    }
}
