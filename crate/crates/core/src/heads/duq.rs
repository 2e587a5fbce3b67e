use serde::{Deserialize, Serialize};

use super::{HeadOutput, UncertaintyHead};
use crate::error::{Error, Result};
use crate::nn::{check_labels, HeadLoss, ParamMut, TrainableHead};
use crate::regularize::ScalarHead;
use crate::tensor::{Matrix, Rng};

/// RBF-centroid head.
///
/// Class `c` embeds features as `W_c z` and scores them with
/// `K_c = exp(−‖W_c z − e_c‖² / (2nσ²))`, `n` the embedding size. Centroids
/// `e_c` are not trained by gradient; they track an exponential moving
/// average of the class embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfCentroidHead {
    /// `d × (K·n)`; column block `c` holds `W_cᵀ`.
    pub weight: Matrix,
    /// `K × n`
    pub centroids: Matrix,
    pub lengthscale: f64,
    pub momentum: f64,
}

impl RbfCentroidHead {
    pub fn new(
        feature_dim: usize,
        classes: usize,
        embed_dim: usize,
        lengthscale: f64,
        momentum: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if !(lengthscale > 0.0) {
            return Err(Error::arg("RBF lengthscale must be positive"));
        }
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::arg("centroid momentum outside [0, 1]"));
        }
        if feature_dim == 0 || classes == 0 || embed_dim == 0 {
            return Err(Error::arg("RBF head dimensions must be positive"));
        }
        let weight = rng.normal_matrix(feature_dim, classes * embed_dim, (1.0 / feature_dim as f64).sqrt());
        let centroids = rng.normal_matrix(classes, embed_dim, 1.0);
        Ok(RbfCentroidHead { weight, centroids, lengthscale, momentum })
    }

    pub fn classes(&self) -> usize {
        self.centroids.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.centroids.cols()
    }

    /// `1/(nσ²)`
    fn k(&self) -> f64 {
        1.0 / (self.embed_dim() as f64 * self.lengthscale * self.lengthscale)
    }

    fn check(&self, z: &Matrix) -> Result<()> {
        if z.cols() != self.weight.rows() {
            return Err(Error::shape(format!("features have {} dims, head expects {}", z.cols(), self.weight.rows())));
        }
        Ok(())
    }

    /// `W_c z − e_c` for every sample and class, laid out `N × (K·n)`.
    fn differences(&self, z: &Matrix) -> Result<Matrix> {
        self.check(z)?;
        let mut d = z.matmul(&self.weight)?;
        let n = self.embed_dim();
        for i in 0..d.rows() {
            let row = d.row_mut(i);
            for c in 0..self.classes() {
                row[c * n..(c + 1) * n].iter_mut().zip(self.centroids.row(c)).for_each(|(v, e)| *v -= e);
            }
        }
        Ok(d)
    }

    /// `ln K_c`, shape `N × K`.
    fn log_kernel_from(&self, diff: &Matrix) -> Matrix {
        let n = self.embed_dim();
        let half_k = 0.5 * self.k();
        Matrix::from_fn(diff.rows(), self.classes(), |i, c| {
            -half_k * diff.row(i)[c * n..(c + 1) * n].iter().map(|v| v * v).sum::<f64>()
        })
    }

    /// Kernel scores `K_c ∈ (0, 1]`, shape `N × K`.
    pub fn kernel(&self, z: &Matrix) -> Result<Matrix> {
        Ok(self.log_kernel_from(&self.differences(z)?).map(f64::exp))
    }

    /// `e_c ← γ e_c + (1−γ)·mean(W_c z)` over the class-`c` rows of the
    /// batch; classes absent from the batch keep their centroid.
    pub fn update_centroids(&mut self, z: &Matrix, labels: &[usize], momentum: f64) -> Result<()> {
        check_labels(z, labels)?;
        self.check(z)?;
        let emb = z.matmul(&self.weight)?;
        let n = self.embed_dim();
        let k = self.classes();
        let mut sums = Matrix::zeros(k, n);
        let mut counts = vec![0usize; k];
        for (i, &y) in labels.iter().enumerate() {
            if y >= k {
                return Err(Error::arg(format!("label {y} outside {k} classes")));
            }
            counts[y] += 1;
            sums.row_mut(y).iter_mut().zip(&emb.row(i)[y * n..(y + 1) * n]).for_each(|(s, v)| *s += v);
        }
        for c in (0..k).filter(|&c| counts[c] > 0) {
            let inv = 1.0 / counts[c] as f64;
            let sum = sums.row(c).to_vec();
            self.centroids
                .row_mut(c)
                .iter_mut()
                .zip(sum)
                .for_each(|(e, s)| *e = momentum * *e + (1.0 - momentum) * s * inv);
        }
        Ok(())
    }
}

impl UncertaintyHead for RbfCentroidHead {
    fn predict(&self, z: &Matrix) -> Result<HeadOutput> {
        let mut probs = self.kernel(z)?;
        let mut uncertainty = Vec::with_capacity(z.rows());
        for i in 0..probs.rows() {
            let row = probs.row_mut(i);
            let max = row.iter().copied().fold(0.0, f64::max);
            uncertainty.push(1.0 - max);
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                row.iter_mut().for_each(|p| *p /= total);
            } else {
                let u = 1.0 / row.len() as f64;
                row.iter_mut().for_each(|p| *p = u);
            }
        }
        Ok(HeadOutput { probs, uncertainty })
    }
}

/// Smallest gap kept between `ln K` and 0 in the negative-class term.
const LOG_KERNEL_CEILING: f64 = -1e-12;

impl TrainableHead for RbfCentroidHead {
    /// Binary cross-entropy between every kernel score and the one-hot
    /// label, averaged over samples and classes, computed in log space.
    fn loss_and_grad(&mut self, z: &Matrix, labels: &[usize]) -> Result<HeadLoss> {
        check_labels(z, labels)?;
        let diff = self.differences(z)?;
        let s = self.log_kernel_from(&diff);
        let (rows, k, n) = (z.rows(), self.classes(), self.embed_dim());
        let norm = 1.0 / (rows * k) as f64;
        let mut loss = 0.0;
        let mut g_emb = Matrix::zeros(rows, k * n);
        for (i, &y) in labels.iter().enumerate() {
            if y >= k {
                return Err(Error::arg(format!("label {y} outside {k} classes")));
            }
            for c in 0..k {
                let sc = s.get(i, c);
                let dl_ds = if c == y {
                    loss -= sc;
                    -1.0
                } else {
                    let sc = sc.min(LOG_KERNEL_CEILING);
                    let one_minus = -sc.exp_m1();
                    loss -= one_minus.ln();
                    if s.get(i, c) < LOG_KERNEL_CEILING {
                        sc.exp() / one_minus
                    } else {
                        0.0
                    }
                };
                // ∂s/∂(W_c z) = −k (W_c z − e_c)
                let coef = -dl_ds * self.k() * norm;
                g_emb.row_mut(i)[c * n..(c + 1) * n]
                    .iter_mut()
                    .zip(&diff.row(i)[c * n..(c + 1) * n])
                    .for_each(|(g, d)| *g = coef * d);
            }
        }
        let input_grad = g_emb.matmul_t(&self.weight)?;
        let w_grad = z.t_matmul(&g_emb)?;
        Ok(HeadLoss { loss: loss * norm, input_grad, param_grads: vec![w_grad.into_data()] })
    }

    fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        vec![ParamMut { values: self.weight.data_mut(), decay: true }]
    }

    fn after_step(&mut self, z: &Matrix, labels: &[usize]) -> Result<()> {
        let m = self.momentum;
        self.update_centroids(z, labels, m)
    }

    fn scalar_head(&self) -> Option<&dyn ScalarHead> {
        Some(self)
    }
}

/// `g(z) = Σ_c K_c(z)`, the scalarization used by the gradient penalty.
impl ScalarHead for RbfCentroidHead {
    fn scalar_and_grad(&self, z: &Matrix) -> Result<(Vec<f64>, Matrix)> {
        let diff = self.differences(z)?;
        let kern = self.log_kernel_from(&diff).map(f64::exp);
        let n = self.embed_dim();
        let k = self.k();
        let mut q = diff;
        for i in 0..q.rows() {
            let row = q.row_mut(i);
            for c in 0..kern.cols() {
                let coef = -k * kern.get(i, c);
                row[c * n..(c + 1) * n].iter_mut().for_each(|v| *v *= coef);
            }
        }
        let g = kern.iter_rows().map(|r| r.iter().sum()).collect();
        Ok((g, q.matmul_t(&self.weight)?))
    }

    fn hessian_vector(&self, z: &Matrix, r: &Matrix) -> Result<(Matrix, Vec<Vec<f64>>)> {
        if r.shape() != z.shape() {
            return Err(Error::shape("direction and features differ in shape"));
        }
        let diff = self.differences(z)?;
        let kern = self.log_kernel_from(&diff).map(f64::exp);
        let wr = r.matmul(&self.weight)?;
        let n = self.embed_dim();
        let k = self.k();
        // M and Q as in ∂ψ/∂z = M Wᵀ and ∂ψ/∂W = zᵀM + rᵀQ
        let mut m = Matrix::zeros(diff.rows(), diff.cols());
        let mut q = Matrix::zeros(diff.rows(), diff.cols());
        for i in 0..diff.rows() {
            for c in 0..kern.cols() {
                let kc = kern.get(i, c);
                let d = &diff.row(i)[c * n..(c + 1) * n];
                let w = &wr.row(i)[c * n..(c + 1) * n];
                let a = kc * d.iter().zip(w).map(|(x, y)| x * y).sum::<f64>();
                for j in 0..n {
                    m.row_mut(i)[c * n + j] = -k * (-k * a * d[j] + kc * w[j]);
                    q.row_mut(i)[c * n + j] = -k * kc * d[j];
                }
            }
        }
        let hz = m.matmul_t(&self.weight)?;
        let mut gw = z.t_matmul(&m)?;
        gw.add_scaled(1.0, &r.t_matmul(&q)?)?;
        Ok((hz, vec![gw.into_data()]))
    }
}
