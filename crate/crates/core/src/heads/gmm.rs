use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{HeadOutput, UncertaintyHead};
use crate::error::{Error, Result};
use crate::tensor::special::log_sum_exp;
use crate::tensor::{
    cholesky_log_det, cholesky_with_ridges, covariance, invert_lower, pca_fit, Matrix, PcaProjection, Rng,
};

/// Ridge added to every covariance before factoring.
const BASE_RIDGE: f64 = 1e-6;
/// Further ridges tried when the base one is not enough.
const RIDGE_LADDER: [f64; 5] = [BASE_RIDGE, 1e-5, 1e-4, 1e-3, 1e-2];
const EM_TOLERANCE: f64 = 1e-6;
const EM_MAX_ITERS: usize = 200;

/// One full-covariance Gaussian with its cached factorization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Population covariance, without the ridge.
    pub covariance: Matrix,
    /// Ridge used in the factorization.
    pub ridge: f64,
    /// `L⁻¹` for `Σ + ridge·I = L Lᵀ`.
    pub whitener: Matrix,
    pub log_det: f64,
}

impl GaussianComponent {
    pub fn new(weight: f64, mean: Vec<f64>, covariance: Matrix) -> Result<Self> {
        if covariance.shape() != (mean.len(), mean.len()) {
            return Err(Error::shape("covariance does not match mean dimension"));
        }
        let (l, ridge) = cholesky_with_ridges(&covariance, &RIDGE_LADDER)?;
        Ok(GaussianComponent {
            weight,
            mean,
            covariance,
            ridge,
            log_det: cholesky_log_det(&l),
            whitener: invert_lower(&l),
        })
    }

    /// `ln N(zᵢ; μ, Σ)` for every row.
    pub fn log_density(&self, z: &Matrix) -> Result<Vec<f64>> {
        let d = self.mean.len();
        let mut centered = z.clone();
        for i in 0..centered.rows() {
            centered.row_mut(i).iter_mut().zip(&self.mean).for_each(|(v, m)| *v -= m);
        }
        let y = centered.matmul_t(&self.whitener)?;
        let norm = -0.5 * (d as f64 * (2.0 * PI).ln() + self.log_det);
        Ok(y.iter_rows().map(|r| norm - 0.5 * r.iter().map(|v| v * v).sum::<f64>()).collect())
    }
}

/// Gaussian mixture over (optionally PCA-projected) features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassGmm {
    pub components: Vec<GaussianComponent>,
    /// Feature dimension the components live in (after projection).
    pub dim: usize,
    pub projection: Option<PcaProjection>,
}

/// What the mixture components correspond to.
#[derive(Debug, Clone, Copy)]
pub enum GmmTarget<'a> {
    /// One Gaussian per class from empirical moments, weights = class
    /// frequencies.
    PerClass { labels: &'a [usize], classes: usize },
    /// `k` components fitted by EM, ignoring labels.
    Em { k: usize },
}

/// Weighted mean and population covariance.
fn weighted_moments(z: &Matrix, weights: &[f64]) -> Result<(Vec<f64>, Matrix, f64)> {
    let total: f64 = weights.iter().sum();
    let d = z.cols();
    let mut mean = vec![0.0; d];
    for (row, &w) in z.iter_rows().zip(weights) {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += w * v);
    }
    mean.iter_mut().for_each(|m| *m /= total);
    let mut scaled = z.clone();
    for (i, &w) in weights.iter().enumerate() {
        let s = w.sqrt();
        scaled.row_mut(i).iter_mut().zip(&mean).for_each(|(v, m)| *v = (*v - m) * s);
    }
    let mut cov = scaled.t_matmul(&scaled)?;
    cov.scale_in_place(1.0 / total);
    symmetrize(&mut cov);
    Ok((mean, cov, total))
}

fn symmetrize(m: &mut Matrix) {
    for i in 0..m.rows() {
        for j in 0..i {
            let v = 0.5 * (m.get(i, j) + m.get(j, i));
            m.set(i, j, v);
            m.set(j, i, v);
        }
    }
}

/// Fits a mixture to `features`, first reducing them to `pca_dim`
/// principal directions when requested.
pub fn gmm_fit(features: &Matrix, target: GmmTarget<'_>, pca_dim: Option<usize>, rng: &mut Rng) -> Result<ClassGmm> {
    if features.rows() == 0 {
        return Err(Error::arg("cannot fit a mixture to no data"));
    }
    let (z, projection) = match pca_dim {
        Some(k) => {
            let p = pca_fit(features, k)?;
            (p.project(features)?, Some(p))
        }
        None => (features.clone(), None),
    };
    let components = match target {
        GmmTarget::PerClass { labels, classes } => fit_per_class(&z, labels, classes)?,
        GmmTarget::Em { k } => fit_em(&z, k, rng)?,
    };
    Ok(ClassGmm { components, dim: z.cols(), projection })
}

fn fit_per_class(z: &Matrix, labels: &[usize], classes: usize) -> Result<Vec<GaussianComponent>> {
    if labels.len() != z.rows() {
        return Err(Error::shape(format!("{} features, {} labels", z.rows(), labels.len())));
    }
    let n = z.rows() as f64;
    (0..classes)
        .map(|c| {
            let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            if idx.is_empty() {
                return GaussianComponent::new(0.0, vec![0.0; z.cols()], Matrix::identity(z.cols()));
            }
            let (mean, cov, _) = weighted_moments(&z.select_rows(&idx), &vec![1.0; idx.len()])?;
            GaussianComponent::new(idx.len() as f64 / n, mean, cov)
        })
        .collect()
}

fn fit_em(z: &Matrix, k: usize, rng: &mut Rng) -> Result<Vec<GaussianComponent>> {
    if k == 0 {
        return Err(Error::arg("EM needs at least one component"));
    }
    let n = z.rows();
    let global_mean = z.column_means();
    let global_cov = covariance(z, &global_mean)?;
    let mut start = rng.permutation(n);
    start.truncate(k);
    let mut comps = (0..k)
        .map(|j| {
            let mean = z.row(start[j % start.len()]).to_vec();
            GaussianComponent::new(1.0 / k as f64, mean, global_cov.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut prev = f64::NEG_INFINITY;
    for _ in 0..EM_MAX_ITERS {
        // E step
        let logs = joint_log_densities(&comps, z)?;
        let mut resp = Matrix::zeros(n, k);
        let mut ll = 0.0;
        for i in 0..n {
            let lse = log_sum_exp(logs.row(i));
            ll += lse;
            resp.row_mut(i).iter_mut().zip(logs.row(i)).for_each(|(r, l)| *r = (l - lse).exp());
        }
        ll /= n as f64;
        // M step
        let mut next = Vec::with_capacity(k);
        for j in 0..k {
            let w = resp.column(j);
            let nk: f64 = w.iter().sum();
            let fitted = if nk > 1e-8 {
                let (mean, cov, _) = weighted_moments(z, &w)?;
                GaussianComponent::new(nk / n as f64, mean, cov).ok()
            } else {
                None
            };
            next.push(match fitted {
                Some(c) => c,
                // degenerate: restart from a random datum
                None => GaussianComponent::new(1.0 / k as f64, z.row(rng.index(n)).to_vec(), global_cov.clone())?,
            });
        }
        let total: f64 = next.iter().map(|c| c.weight).sum();
        next.iter_mut().for_each(|c| c.weight /= total);
        comps = next;
        if (ll - prev).abs() < EM_TOLERANCE {
            break;
        }
        prev = ll;
    }
    Ok(comps)
}

/// `ln πⱼ + ln N(zᵢ; μⱼ, Σⱼ)`, shape `N × C`.
fn joint_log_densities(comps: &[GaussianComponent], z: &Matrix) -> Result<Matrix> {
    let mut out = Matrix::zeros(z.rows(), comps.len());
    for (j, c) in comps.iter().enumerate() {
        let lw = c.weight.ln();
        for (i, v) in c.log_density(z)?.into_iter().enumerate() {
            out.set(i, j, lw + v);
        }
    }
    Ok(out)
}

impl ClassGmm {
    fn prepare(&self, z: &Matrix) -> Result<Matrix> {
        let projected = match &self.projection {
            Some(p) => p.project(z)?,
            None => z.clone(),
        };
        if projected.cols() != self.dim {
            return Err(Error::shape(format!("features have {} dims, mixture expects {}", projected.cols(), self.dim)));
        }
        Ok(projected)
    }

    /// `ln πⱼ N(zᵢ; μⱼ, Σⱼ)` for every sample and component.
    pub fn component_log_densities(&self, z: &Matrix) -> Result<Matrix> {
        joint_log_densities(&self.components, &self.prepare(z)?)
    }

    /// Marginal `ln Σⱼ πⱼ N(zᵢ; μⱼ, Σⱼ)`.
    pub fn log_likelihood(&self, z: &Matrix) -> Result<Vec<f64>> {
        let logs = self.component_log_densities(z)?;
        Ok(logs.iter_rows().map(log_sum_exp).collect())
    }

    /// Draws samples from the mixture (in the projected space).
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Result<Matrix> {
        let mut out = Matrix::zeros(n, self.dim);
        let factors: Vec<Matrix> = self
            .components
            .iter()
            .map(|c| cholesky_with_ridges(&c.covariance, &[c.ridge]).map(|(l, _)| l))
            .collect::<Result<_>>()?;
        for i in 0..n {
            let mut u = rng.uniform();
            let mut j = 0;
            while j + 1 < self.components.len() && u >= self.components[j].weight {
                u -= self.components[j].weight;
                j += 1;
            }
            let e = rng.normal_vec(self.dim);
            let x = factors[j].matvec(&e)?;
            out.row_mut(i).iter_mut().zip(x.iter().zip(&self.components[j].mean)).for_each(|(o, (a, m))| *o = a + m);
        }
        Ok(out)
    }
}

/// How a mixture turns likelihoods into uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GmmScore {
    /// `−ln Σⱼ πⱼ N(z)`
    Marginal,
    /// `−maxⱼ ln πⱼ N(z)`
    MaxComponent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmHead {
    pub gmm: ClassGmm,
    pub score: GmmScore,
}

impl UncertaintyHead for GmmHead {
    /// Probabilities are the component posteriors.
    fn predict(&self, z: &Matrix) -> Result<HeadOutput> {
        let logs = self.gmm.component_log_densities(z)?;
        let mut probs = Matrix::zeros(logs.rows(), logs.cols());
        let mut uncertainty = Vec::with_capacity(logs.rows());
        for i in 0..logs.rows() {
            let row = logs.row(i);
            let lse = log_sum_exp(row);
            probs.row_mut(i).iter_mut().zip(row).for_each(|(p, l)| *p = (l - lse).exp());
            uncertainty.push(match self.score {
                GmmScore::Marginal => -lse,
                GmmScore::MaxComponent => -row.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            });
        }
        Ok(HeadOutput { probs, uncertainty })
    }
}
