use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::special::{sigmoid, softplus};
use crate::tensor::Rng;

/// A stack of radial flow layers evaluated in the density direction:
/// `y ← y + β h(r)(y − z₀)`, `h(r) = 1/(α + r)`, `r = ‖y − z₀‖`, starting from
/// `y = z` and ending in a standard normal base.
///
/// Each layer stores `z₀` and unconstrained scalars `(a, b)` with
/// `α = softplus(a)` and `β = −α + softplus(b)`, so `β > −α` and every
/// layer is invertible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialFlow {
    pub dim: usize,
    pub depth: usize,
    /// Per layer: `z₀` (dim values), `a`, `b`.
    pub params: Vec<f64>,
}

struct LayerCache {
    diff: Vec<f64>,
    r: f64,
    alpha: f64,
    beta: f64,
    h: f64,
}

impl RadialFlow {
    pub fn new(dim: usize, depth: usize, rng: &mut Rng) -> Result<Self> {
        if dim == 0 {
            return Err(Error::arg("flow dimension must be positive"));
        }
        let bound = 1.0 / (dim as f64).sqrt();
        let params = (0..depth * (dim + 2)).map(|_| rng.uniform_range(-bound, bound)).collect();
        Ok(RadialFlow { dim, depth, params })
    }

    fn stride(&self) -> usize {
        self.dim + 2
    }

    fn layer(&self, l: usize) -> (&[f64], f64, f64) {
        let p = &self.params[l * self.stride()..(l + 1) * self.stride()];
        let (a, b) = (p[self.dim], p[self.dim + 1]);
        let alpha = softplus(a);
        (&p[..self.dim], alpha, -alpha + softplus(b))
    }

    /// Sets layer `l` to the given `z₀`, `α > 0` and `β > −α`.
    pub fn set_layer(&mut self, l: usize, z0: &[f64], alpha: f64, beta: f64) -> Result<()> {
        if z0.len() != self.dim || l >= self.depth || !(alpha > 0.0) || !(beta > -alpha) {
            return Err(Error::arg("invalid radial layer parameters"));
        }
        let s = self.stride();
        let p = &mut self.params[l * s..(l + 1) * s];
        p[..self.dim].copy_from_slice(z0);
        p[self.dim] = crate::tensor::special::softplus_inverse(alpha);
        p[self.dim + 1] = crate::tensor::special::softplus_inverse(beta + alpha);
        Ok(())
    }

    fn run(&self, z: &[f64]) -> Result<(Vec<f64>, f64, Vec<LayerCache>)> {
        if z.len() != self.dim {
            return Err(Error::shape(format!("point has {} dims, flow expects {}", z.len(), self.dim)));
        }
        let d = self.dim as f64;
        let mut y = z.to_vec();
        let mut log_det = 0.0;
        let mut caches = Vec::with_capacity(self.depth);
        for l in 0..self.depth {
            let (z0, alpha, beta) = self.layer(l);
            let diff: Vec<f64> = y.iter().zip(z0).map(|(a, b)| a - b).collect();
            let r = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
            let h = 1.0 / (alpha + r);
            log_det += (d - 1.0) * (beta * h).ln_1p() + (beta * alpha * h * h).ln_1p();
            y.iter_mut().zip(&diff).for_each(|(v, df)| *v += beta * h * df);
            caches.push(LayerCache { diff, r, alpha, beta, h });
        }
        Ok((y, log_det, caches))
    }

    /// Maps `z` to the base space.
    pub fn transform(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.run(z)?.0)
    }

    /// `ln p(z) = ln N(f(z); 0, I) + ln |det ∂f/∂z|`.
    pub fn log_prob(&self, z: &[f64]) -> Result<f64> {
        let (y, log_det, _) = self.run(z)?;
        Ok(base_log_density(&y) + log_det)
    }

    /// `ln p(z)` and the gradient of `w · ln p(z)` with respect to `z`; the
    /// parameter gradient is added into `param_grad`.
    pub fn log_prob_backward(&self, z: &[f64], w: f64, param_grad: &mut [f64]) -> Result<(f64, Vec<f64>)> {
        if param_grad.len() != self.params.len() {
            return Err(Error::shape("parameter gradient buffer has the wrong length"));
        }
        let (y, log_det, caches) = self.run(z)?;
        let d = self.dim as f64;
        let mut g: Vec<f64> = y.iter().map(|v| -w * v).collect();
        for (l, c) in caches.iter().enumerate().rev() {
            let LayerCache { diff, r, alpha, beta, h } = c;
            let (r, alpha, beta, h) = (*r, *alpha, *beta, *h);
            let a = 1.0 + beta * h;
            let bq = 1.0 + beta * alpha * h * h;
            let g_dot = g.iter().zip(diff).map(|(x, y)| x * y).sum::<f64>();
            let h_bar = beta * g_dot + w * ((d - 1.0) * beta / a + 2.0 * beta * alpha * h / bq);
            let beta_bar = h * g_dot + w * ((d - 1.0) * h / a + alpha * h * h / bq);
            let alpha_bar = w * beta * h * h / bq - h_bar * h * h;
            let r_bar = -h_bar * h * h;
            let radial = if r > 0.0 { r_bar / r } else { 0.0 };
            let diff_bar: Vec<f64> = g.iter().zip(diff).map(|(gi, di)| beta * h * gi + radial * di).collect();

            let s = self.stride();
            let base = l * s;
            let (a_raw, b_raw) = (self.params[base + self.dim], self.params[base + self.dim + 1]);
            for (k, db) in diff_bar.iter().enumerate() {
                param_grad[base + k] -= db;
            }
            param_grad[base + self.dim] += (alpha_bar - beta_bar) * sigmoid(a_raw);
            param_grad[base + self.dim + 1] += beta_bar * sigmoid(b_raw);
            g.iter_mut().zip(&diff_bar).for_each(|(gi, db)| *gi += db);
        }
        Ok((base_log_density(&y) + log_det, g))
    }
}

fn base_log_density(y: &[f64]) -> f64 {
    -0.5 * (y.len() as f64 * (2.0 * PI).ln() + y.iter().map(|v| v * v).sum::<f64>())
}
