//! Small dense helpers shared by the solver, the network and the tests.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Mat, MvcError, Result};

/// Thin SVD `a = u * diag(s) * vt` with singular values sorted in
/// descending order and a deterministic sign: the largest-magnitude entry
/// of every left singular vector is positive (first index wins ties).
///
/// Computed with one-sided Jacobi rotations, which keep high relative
/// accuracy on the small anchor-sized matrices this crate factorizes.
pub(crate) struct ThinSvd {
    pub u: Mat,
    #[allow(dead_code)]
    pub s: DVector<f64>,
    pub vt: Mat,
}

const JACOBI_MAX_SWEEPS: usize = 80;

/// Orthogonalizes the columns of a tall `b` (`p × q`, `p ≥ q`): returns
/// `(q_mat, sigma, j)` with `b = q_mat · diag(sigma) · jᵀ`, `q_mat` with
/// orthonormal columns and `j` orthogonal.
fn one_sided_jacobi(mut b: Mat) -> Result<(Mat, Vec<f64>, Mat)> {
    let (p, q) = b.shape();
    let mut j = Mat::identity(q, q);
    let tol = f64::EPSILON * p as f64;
    let mut converged = q < 2;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if converged {
            break;
        }
        converged = true;
        for c1 in 0..q - 1 {
            for c2 in c1 + 1..q {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for r in 0..p {
                    let (x, y) = (b[(r, c1)], b[(r, c2)]);
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                converged = false;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for r in 0..p {
                    let (x, y) = (b[(r, c1)], b[(r, c2)]);
                    b[(r, c1)] = c * x - s * y;
                    b[(r, c2)] = s * x + c * y;
                }
                for r in 0..q {
                    let (x, y) = (j[(r, c1)], j[(r, c2)]);
                    j[(r, c1)] = c * x - s * y;
                    j[(r, c2)] = s * x + c * y;
                }
            }
        }
    }
    if !converged {
        return Err(MvcError::Numerical("SVD did not converge".into()));
    }

    let sigma: Vec<f64> = b.column_iter().map(|col| col.norm()).collect();
    let smax = sigma.iter().cloned().fold(0.0, f64::max);
    let floor = smax * f64::EPSILON * p as f64;
    let mut q_mat = Mat::zeros(p, q);
    let mut missing = Vec::new();
    for c in 0..q {
        if sigma[c] > floor && sigma[c] > 0.0 {
            q_mat.set_column(c, &(b.column(c) / sigma[c]));
        } else {
            missing.push(c);
        }
    }
    // Null directions: complete the basis with the standard basis vector
    // that has the largest component outside the current span.
    for c in missing {
        let mut best: Option<(f64, DVector<f64>)> = None;
        for i in 0..p {
            let mut cand = DVector::zeros(p);
            cand[i] = 1.0;
            for _ in 0..2 {
                for k in 0..q {
                    if k == c || q_mat.column(k).norm_squared() == 0.0 {
                        continue;
                    }
                    let proj = q_mat.column(k).dot(&cand);
                    cand -= q_mat.column(k) * proj;
                }
            }
            let norm = cand.norm();
            if best.as_ref().is_none_or(|(b, _)| norm > *b) {
                best = Some((norm, cand));
            }
        }
        let (norm, cand) = best.expect("p >= 1");
        q_mat.set_column(c, &(cand / norm));
    }
    Ok((q_mat, sigma, j))
}

pub(crate) fn thin_svd(a: &Mat) -> Result<ThinSvd> {
    if a.iter().any(|x| !x.is_finite()) {
        return Err(MvcError::Numerical("SVD input has non-finite entries".into()));
    }
    let (u, s, vt) = if a.nrows() <= a.ncols() {
        let (q_mat, sigma, j) = one_sided_jacobi(a.transpose())?;
        (j, sigma, q_mat.transpose())
    } else {
        let (q_mat, sigma, j) = one_sided_jacobi(a.clone())?;
        (q_mat, sigma, j.transpose())
    };

    let k = s.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]).then(i.cmp(&j)));

    let mut u_sorted = Mat::zeros(u.nrows(), k);
    let mut vt_sorted = Mat::zeros(k, vt.ncols());
    let mut s_sorted = DVector::zeros(k);
    for (dst, &src) in order.iter().enumerate() {
        let col = u.column(src);
        let mut pivot = 0;
        for i in 1..col.len() {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        u_sorted.set_column(dst, &(col * sign));
        vt_sorted.set_row(dst, &(vt.row(src) * sign));
        s_sorted[dst] = s[src];
    }
    Ok(ThinSvd {
        u: u_sorted,
        s: s_sorted,
        vt: vt_sorted,
    })
}

/// `‖P Pᵀ − I‖_F`.
pub fn orthogonality_error(p: &Mat) -> f64 {
    let gram = p * p.transpose();
    (gram - Mat::identity(p.nrows(), p.nrows())).norm()
}

/// Euclidean norm of every row.
/// Row-wise dot products of two equally shaped matrices.
pub(crate) fn row_dots(a: &Mat, b: &Mat) -> Vec<f64> {
    let mut out = vec![0.0; a.nrows()];
    for (ca, cb) in a.column_iter().zip(b.column_iter()) {
        for ((acc, x), y) in out.iter_mut().zip(ca.iter()).zip(cb.iter()) {
            *acc += x * y;
        }
    }
    out
}

pub(crate) fn row_norms(a: &Mat) -> Vec<f64> {
    let mut sq = vec![0.0; a.nrows()];
    for col in a.column_iter() {
        for (acc, x) in sq.iter_mut().zip(col.iter()) {
            *acc += x * x;
        }
    }
    sq.into_iter().map(f64::sqrt).collect()
}

pub(crate) fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Mat {
    // Row-major draw order so results do not depend on storage layout.
    let mut m = Mat::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = rng.sample(StandardNormal);
        }
    }
    m
}

/// Random matrix with orthonormal rows (`rows ≤ cols`) or orthonormal
/// columns (`rows > cols`), taken from the QR factor of a Gaussian draw.
pub fn random_orthonormal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Mat {
    if rows <= cols {
        let g = gaussian(cols, rows, rng);
        let q = g.qr().q();
        q.transpose()
    } else {
        let g = gaussian(rows, cols, rng);
        g.qr().q()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn check(a: &Mat) {
        let svd = thin_svd(a).unwrap();
        let k = a.nrows().min(a.ncols());
        assert_eq!(svd.s.len(), k);
        let rec = &svd.u * Mat::from_diagonal(&svd.s) * &svd.vt;
        assert!((rec - a).amax() <= 1e-12 * a.amax().max(1.0));
        assert!((svd.u.transpose() * &svd.u - Mat::identity(k, k)).norm() <= 1e-12);
        assert!((&svd.vt * svd.vt.transpose() - Mat::identity(k, k)).norm() <= 1e-12);
        assert!(svd.s.as_slice().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn svd_random_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let r = rng.random_range(1..=9);
            let c = rng.random_range(1..=14);
            let mut a = gaussian(r, c, &mut rng);
            if rng.random_bool(0.3) {
                // dominant rank-one part
                let x = gaussian(r, 1, &mut rng);
                let y = gaussian(1, c, &mut rng);
                a += x * y * 300.0;
            }
            check(&a);
        }
    }

    #[test]
    fn svd_rank_deficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = gaussian(5, 2, &mut rng);
        let y = gaussian(2, 9, &mut rng);
        check(&(x * y));
        check(&Mat::zeros(4, 6));
        check(&Mat::zeros(6, 4));
        let mut e = Mat::zeros(3, 3);
        e[(1, 2)] = 2.0;
        check(&e);
    }
}
