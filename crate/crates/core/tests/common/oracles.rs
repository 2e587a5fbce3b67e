//! Naive references for densities, entropy decompositions and Lipschitz
//! bounds.

use std::f64::consts::{LN_2, PI};

use dum_core::baselines::{mutual_information, PredictiveSamples};
use dum_core::heads::{gmm_fit, ClassGmm, GmmTarget, RadialFlow};
use dum_core::nn::MlpModel;
use dum_core::regularize::dirichlet_entropy;
use dum_core::{Matrix, Rng};
use nalgebra::{DMatrix, DVector};

use super::SuiteReport;

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
}

/// Largest singular value by a full SVD.
pub fn svd_spectral_norm(m: &Matrix) -> f64 {
    to_na(m).singular_values().iter().cloned().fold(0.0, f64::max)
}

/// `ln Σⱼ πⱼ N(z; μⱼ, Σⱼ + ridgeⱼ I)` with explicit inverses and
/// determinants, summed in linear space. `z` must already be projected.
pub fn naive_gmm_log_likelihood(gmm: &ClassGmm, z: &[f64]) -> f64 {
    let d = z.len();
    let mut total = 0.0;
    for c in &gmm.components {
        let cov = to_na(&c.covariance) + DMatrix::identity(d, d) * c.ridge;
        let inv = cov.clone().try_inverse().expect("invertible covariance");
        let diff = DVector::from_iterator(d, z.iter().zip(&c.mean).map(|(a, b)| a - b));
        let maha = (diff.transpose() * inv * &diff)[(0, 0)];
        let norm = ((2.0 * PI).powi(d as i32) * cov.determinant()).sqrt();
        total += c.weight * (-0.5 * maha).exp() / norm;
    }
    total.ln()
}

/// `ln N(f(z); 0, I) + ln |det J|` with `J` from central differences of
/// the transform.
pub fn numerical_flow_log_prob(flow: &RadialFlow, z: &[f64], h: f64) -> f64 {
    let d = z.len();
    let mut jac = DMatrix::zeros(d, d);
    let mut p = z.to_vec();
    for j in 0..d {
        p[j] = z[j] + h;
        let up = flow.transform(&p).unwrap();
        p[j] = z[j] - h;
        let down = flow.transform(&p).unwrap();
        p[j] = z[j];
        for i in 0..d {
            jac[(i, j)] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    let y = flow.transform(z).unwrap();
    let base = -0.5 * (d as f64 * (2.0 * PI).ln() + y.iter().map(|v| v * v).sum::<f64>());
    base + jac.determinant().abs().ln()
}

fn clustered(rng: &mut Rng, n: usize, d: usize, k: usize) -> (Matrix, Vec<usize>) {
    let centers: Vec<Vec<f64>> = (0..k).map(|_| rng.normal_vec(d).iter().map(|v| 3.0 * v).collect()).collect();
    let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    let x = Matrix::from_fn(n, d, |i, j| centers[labels[i]][j] + rng.normal());
    (x, labels)
}

/// Mixture log-likelihoods and flow log-densities against the naive
/// references, plus the Dirichlet entropy maximum.
pub fn density_suite(seed: u64, draws: usize, tol: f64) -> SuiteReport {
    let mut rep = SuiteReport::default();
    let mut rng = Rng::new(seed);
    for inst in 0..20 {
        let d = 1 + rng.index(5);
        let k = 1 + rng.index(4);
        let (x, labels) = clustered(&mut rng, 40 * k, d, k);
        let gmm = if inst % 2 == 0 {
            gmm_fit(&x, GmmTarget::PerClass { labels: &labels, classes: k }, None, &mut rng).unwrap()
        } else {
            gmm_fit(&x, GmmTarget::Em { k }, None, &mut rng).unwrap()
        };
        let probe = Matrix::from_fn(8, d, |i, j| x.get(i * 5, j) + 0.5 * rng.normal());
        let got = gmm.log_likelihood(&probe).unwrap();
        for (i, g) in got.iter().enumerate() {
            rep.compare(&format!("gmm {inst} row {i}"), *g, naive_gmm_log_likelihood(&gmm, probe.row(i)), tol);
        }
    }
    for inst in 0..20 {
        let d = 1 + rng.index(6);
        let flow = RadialFlow::new(d, 1 + rng.index(6), &mut rng).unwrap();
        for i in 0..5 {
            let z = rng.normal_vec(d);
            let got = flow.log_prob(&z).unwrap();
            rep.compare(&format!("flow {inst} point {i}"), got, numerical_flow_log_prob(&flow, &z, 1e-5), tol);
        }
    }
    let uniform = dirichlet_entropy(&[1.0, 1.0, 1.0]).unwrap();
    rep.compare("entropy of Dir(1,1,1)", uniform, -LN_2, 1e-10);
    for i in 0..draws {
        let alpha: Vec<f64> = (0..3).map(|_| 1.0 + rng.uniform() * 10f64.powf(rng.uniform_range(-2.0, 2.0))).collect();
        let h = dirichlet_entropy(&alpha).unwrap();
        rep.require(&format!("draw {i}: H{alpha:?} = {h} exceeds H(1,1,1)"), h <= uniform + 1e-12);
    }
    rep
}

fn naive_entropy(p: &[f64]) -> f64 {
    p.iter().map(|&v| if v > 0.0 { -v * v.ln() } else { 0.0 }).sum()
}

/// `(1/T) Σₜ KL(pₜ ‖ p̄)`
fn naive_mutual_information(samples: &[Vec<f64>]) -> f64 {
    let t = samples.len() as f64;
    let k = samples[0].len();
    let mean: Vec<f64> = (0..k).map(|j| samples.iter().map(|s| s[j]).sum::<f64>() / t).collect();
    samples
        .iter()
        .map(|s| s.iter().zip(&mean).map(|(&p, &m)| if p > 0.0 { p * (p / m).ln() } else { 0.0 }).sum::<f64>())
        .sum::<f64>()
        / t
}

fn random_simplex(rng: &mut Rng, k: usize, sharp: f64) -> Vec<f64> {
    let logits: Vec<f64> = (0..k).map(|_| sharp * rng.normal()).collect();
    dum_core::tensor::special::softmax(&logits)
}

/// Decomposition identities of the mutual-information estimator.
pub fn mutual_information_suite(seed: u64, instances: usize) -> SuiteReport {
    let mut rep = SuiteReport::default();
    let mut rng = Rng::new(seed);
    for inst in 0..instances {
        let k = 2 + rng.index(9);
        let t = 1 + rng.index(12);
        let sharp = 10f64.powf(rng.uniform_range(-1.0, 1.5));
        let samples: Vec<Vec<f64>> = (0..t).map(|_| random_simplex(&mut rng, k, sharp)).collect();
        let dec = mutual_information(&samples).unwrap();
        let mean: Vec<f64> = (0..k).map(|j| samples.iter().map(|s| s[j]).sum::<f64>() / t as f64).collect();
        rep.compare(&format!("{inst}: u_ep + u_al"), dec.epistemic + dec.aleatoric, naive_entropy(&mean), 1e-12);
        rep.compare(&format!("{inst}: total"), dec.total, naive_entropy(&mean), 1e-12);
        rep.compare(&format!("{inst}: u_ep"), dec.epistemic, naive_mutual_information(&samples), 1e-12);
        rep.require(&format!("{inst}: negative component"), dec.epistemic >= 0.0 && dec.aleatoric >= 0.0);

        let dup = vec![samples[0].clone(); t];
        let d = mutual_information(&dup).unwrap();
        rep.compare(&format!("{inst}: duplicated u_ep"), d.epistemic, 0.0, 1e-12);

        // batched decomposition agrees with the per-row one
        let mats: Vec<Matrix> = samples.iter().map(|s| Matrix::row_vector(s)).collect();
        let batched = PredictiveSamples::new(mats).unwrap().decompose()[0];
        rep.compare(&format!("{inst}: batched u_ep"), batched.epistemic, dec.epistemic, 1e-15);
    }
    let split = mutual_information(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    rep.compare("(1,0)/(0,1) u_ep", split.epistemic, LN_2, 1e-12);
    rep.compare("(1,0)/(0,1) u_al", split.aleatoric, 0.0, 1e-12);
    rep
}

/// Largest `sn(W_eff) − c` over the spectrally normalized layers; negative
/// when every layer is within its bound. Layers without normalization are
/// ignored.
pub fn spectral_excess(model: &MlpModel) -> f64 {
    model
        .layers
        .iter()
        .zip(model.effective_weights())
        .filter_map(|(l, w)| l.spectral.as_ref().map(|s| svd_spectral_norm(&w) - s.coeff))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Largest `‖f(x) − f(y)‖ − L‖x − y‖` over random input pairs.
pub fn lipschitz_violation(model: &MlpModel, lipschitz: f64, pairs: usize, rng: &mut Rng) -> f64 {
    let d = model.input_dim();
    let x = rng.normal_matrix(pairs, d, 1.0);
    let mut y = x.clone();
    for i in 0..pairs {
        // mix near and far partners
        let scale = 10f64.powf(rng.uniform_range(-4.0, 1.0));
        y.row_mut(i).iter_mut().for_each(|v| *v += scale * rng.normal());
    }
    let fx = model.predict(&x).unwrap();
    let fy = model.predict(&y).unwrap();
    (0..pairs)
        .map(|i| {
            let out: f64 = fx.row(i).iter().zip(fy.row(i)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let inp: f64 = x.row(i).iter().zip(y.row(i)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            out - lipschitz * inp
        })
        .fold(f64::NEG_INFINITY, f64::max)
}
