//! Decompositions: power iteration for the spectral norm, Cholesky with
//! ridge escalation, cyclic Jacobi for symmetric eigenproblems, and PCA
//! built on top of it.

use serde::{Deserialize, Serialize};

use super::matrix::{dot, norm2, Matrix};
use crate::error::{Error, Result};

/// Result of [`spectral_norm_power_iter`].
#[derive(Debug, Clone, PartialEq)]
pub struct PowerIteration {
    pub sigma: f64,
    /// Left singular-vector estimate, length `w.rows()`.
    pub u: Vec<f64>,
    /// Right singular-vector estimate, length `w.cols()`. All zeros when `w` is zero.
    pub v: Vec<f64>,
}

/// Estimates the largest singular value of `w` by `iters` rounds of power
/// iteration started from `u`. Feeding the returned `u` back in on the next
/// call gives the warm-started scheme used during training. `iters == 0`
/// runs a single round.
pub fn spectral_norm_power_iter(w: &Matrix, u: &[f64], iters: usize) -> Result<PowerIteration> {
    if u.len() != w.rows() {
        return Err(Error::shape(format!("u has length {}, matrix has {} rows", u.len(), w.rows())));
    }
    let un = norm2(u);
    if !(un > 0.0) || !un.is_finite() {
        return Err(Error::arg("power iteration needs a nonzero finite start vector"));
    }
    let mut u: Vec<f64> = u.iter().map(|x| x / un).collect();
    let mut v = vec![0.0; w.cols()];
    let mut sigma = 0.0;
    for _ in 0..iters.max(1) {
        let mut nv = w.t_matvec(&u)?;
        let nv_norm = norm2(&nv);
        if nv_norm == 0.0 {
            return Ok(zero_case(u, w.cols()));
        }
        nv.iter_mut().for_each(|x| *x /= nv_norm);
        let mut nu = w.matvec(&nv)?;
        let nu_norm = norm2(&nu);
        if nu_norm == 0.0 {
            return Ok(zero_case(u, w.cols()));
        }
        nu.iter_mut().for_each(|x| *x /= nu_norm);
        sigma = nu_norm;
        u = nu;
        v = nv;
    }
    Ok(PowerIteration { sigma, u, v })
}

fn zero_case(u: Vec<f64>, cols: usize) -> PowerIteration {
    PowerIteration { sigma: 0.0, u, v: vec![0.0; cols] }
}

/// Runs power iteration until the estimate changes by less than `rel_tol`
/// (relative) between rounds, with at least `min_iters` and at most
/// `max_iters` rounds.
pub fn spectral_norm_converged(
    w: &Matrix,
    u: &[f64],
    min_iters: usize,
    rel_tol: f64,
    max_iters: usize,
) -> Result<PowerIteration> {
    let mut state = spectral_norm_power_iter(w, u, min_iters)?;
    let mut done = min_iters.max(1);
    while done < max_iters && state.sigma > 0.0 {
        let next = spectral_norm_power_iter(w, &state.u, 1)?;
        done += 1;
        let change = (next.sigma - state.sigma).abs();
        state = next;
        if change <= rel_tol * state.sigma {
            break;
        }
    }
    Ok(state)
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::shape(format!("cholesky of non-square {}x{}", n, a.cols())));
    }
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Numerical(format!("matrix not positive definite at pivot {j}")));
        }
        let d = d.sqrt();
        l.set(j, j, d);
        for i in j + 1..n {
            let mut s = a.get(i, j);
            let (ri, rj) = (l.row(i), l.row(j));
            s -= dot(&ri[..j], &rj[..j]);
            l.set(i, j, s / d);
        }
    }
    Ok(l)
}

/// Tries `a + r·I` for each ridge `r` in turn and returns the first
/// factorization that succeeds together with the ridge used.
pub fn cholesky_with_ridges(a: &Matrix, ridges: &[f64]) -> Result<(Matrix, f64)> {
    let mut last = None;
    for &r in ridges {
        let mut shifted = a.clone();
        for i in 0..a.rows() {
            shifted.set(i, i, a.get(i, i) + r);
        }
        match cholesky(&shifted) {
            Ok(l) => return Ok((l, r)),
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::arg("no ridge values supplied")))
}

/// Ridge ladder 0, 1e-6, 1e-5, …, 1e-2.
pub const ESCALATING_RIDGES: [f64; 6] = [0.0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2];

/// Solves `L x = b` for lower-triangular `L`.
pub fn solve_lower(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut x = vec![0.0; n];
    for i in 0..n {
        let s = b[i] - dot(&l.row(i)[..i], &x[..i]);
        x[i] = s / l.get(i, i);
    }
    x
}

/// Solves `Lᵀ x = b` for lower-triangular `L`.
pub fn solve_lower_transposed(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        x[i] /= l.get(i, i);
        let xi = x[i];
        let row = l.row(i);
        for k in 0..i {
            x[k] -= row[k] * xi;
        }
    }
    x
}

/// Inverse of a lower-triangular matrix (itself lower triangular).
pub fn invert_lower(l: &Matrix) -> Matrix {
    let n = l.rows();
    // build the transpose row by row so the inner loop is contiguous
    let mut t = Matrix::zeros(n, n);
    for j in 0..n {
        let col = t.row_mut(j);
        col[j] = 1.0 / l.get(j, j);
        for i in j + 1..n {
            let row = l.row(i);
            let s: f64 = row[j..i].iter().zip(&col[j..i]).map(|(a, b)| a * b).sum();
            col[i] = -s / row[i];
        }
    }
    t.transpose()
}

/// Solves `(L Lᵀ) x = b`.
pub fn cholesky_solve(l: &Matrix, b: &[f64]) -> Vec<f64> {
    solve_lower_transposed(l, &solve_lower(l, b))
}

/// `log det(L Lᵀ)`
pub fn cholesky_log_det(l: &Matrix) -> f64 {
    2.0 * (0..l.rows()).map(|i| l.get(i, i).ln()).sum::<f64>()
}

/// Symmetric eigendecomposition.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    /// Eigenvalues in descending order.
    pub values: Vec<f64>,
    /// Eigenvectors as columns, in the order of `values`.
    pub vectors: Matrix,
}

/// Cyclic Jacobi eigensolver for symmetric matrices.
pub fn symmetric_eigen(a: &Matrix) -> Result<SymmetricEigen> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::shape(format!("eigen of non-square {}x{}", n, a.cols())));
    }
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    let scale = a.frobenius_norm().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m.get(i, j).powi(2))
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m.get(p, q);
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m.get(j, j).total_cmp(&m.get(i, i)));
    let values = order.iter().map(|&i| m.get(i, i)).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| v.get(r, order[c]));
    Ok(SymmetricEigen { values, vectors })
}

/// Population covariance of the rows of `data` around `mean`.
pub fn covariance(data: &Matrix, mean: &[f64]) -> Result<Matrix> {
    let mut centered = data.clone();
    for r in 0..centered.rows() {
        centered.row_mut(r).iter_mut().zip(mean).for_each(|(x, m)| *x -= m);
    }
    let mut cov = centered.t_matmul(&centered)?;
    cov.scale_in_place(1.0 / data.rows().max(1) as f64);
    Ok(cov)
}

/// Linear projection onto the leading principal directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaProjection {
    pub mean: Vec<f64>,
    /// `out_dim × d`, orthonormal rows.
    pub components: Matrix,
    /// Variance along each component, descending.
    pub explained_variance: Vec<f64>,
    /// Set when some kept direction carries no variance and was taken from
    /// the orthonormal completion of the data span.
    pub rank_deficient: bool,
}

pub fn pca_fit(data: &Matrix, out_dim: usize) -> Result<PcaProjection> {
    if out_dim > data.cols() {
        return Err(Error::arg(format!("PCA to {out_dim} dims from {}", data.cols())));
    }
    if data.rows() < 2 {
        return Err(Error::arg("PCA needs at least two rows"));
    }
    let mean = data.column_means();
    let cov = covariance(data, &mean)?;
    let eig = symmetric_eigen(&cov)?;
    let top = eig.values.first().copied().unwrap_or(0.0).max(0.0);
    let tol = 1e-12 * top.max(f64::MIN_POSITIVE);
    let components = Matrix::from_fn(out_dim, data.cols(), |r, c| eig.vectors.get(c, r));
    let explained_variance: Vec<f64> = eig.values[..out_dim].iter().map(|v| v.max(0.0)).collect();
    let rank_deficient = explained_variance.iter().any(|&v| v <= tol);
    Ok(PcaProjection { mean, components, explained_variance, rank_deficient })
}

impl PcaProjection {
    pub fn input_dim(&self) -> usize {
        self.components.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.components.rows()
    }

    pub fn project(&self, data: &Matrix) -> Result<Matrix> {
        if data.cols() != self.input_dim() {
            return Err(Error::shape(format!("PCA fitted on {} dims, got {}", self.input_dim(), data.cols())));
        }
        let mut centered = data.clone();
        for r in 0..centered.rows() {
            centered.row_mut(r).iter_mut().zip(&self.mean).for_each(|(x, m)| *x -= m);
        }
        centered.matmul_t(&self.components)
    }

    pub fn reconstruct(&self, projected: &Matrix) -> Result<Matrix> {
        let mut out = projected.matmul(&self.components)?;
        out.add_row_broadcast(&self.mean)?;
        Ok(out)
    }
}
