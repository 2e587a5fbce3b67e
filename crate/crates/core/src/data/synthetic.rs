use std::f64::consts::PI;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::{Matrix, Rng};

/// Two interleaved half circles: class 0 on the unit upper arc, class 1 on
/// the lower arc centered at (1, 0.5). Points are evenly spaced along each
/// arc, then perturbed by isotropic Gaussian noise.
pub fn make_two_moons(n: usize, noise: f64, rng: &mut Rng) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::arg("two moons needs at least 2 points"));
    }
    let n_outer = n / 2;
    let n_inner = n - n_outer;
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let spacing = |i: usize, m: usize| if m > 1 { PI * i as f64 / (m - 1) as f64 } else { 0.0 };
    for i in 0..n_outer {
        let t = spacing(i, n_outer);
        rows.push([t.cos(), t.sin()]);
        labels.push(0);
    }
    for i in 0..n_inner {
        let t = spacing(i, n_inner);
        rows.push([1.0 - t.cos(), 0.5 - t.sin()]);
        labels.push(1);
    }
    let mut x = Matrix::from_rows(&rows)?;
    if noise > 0.0 {
        x.data_mut().iter_mut().for_each(|v| *v += noise * rng.normal());
    }
    Dataset::new(x, labels, 2)
}

/// Isotropic Gaussian blobs, sample `i` drawn from center `i mod K`.
pub fn make_blobs(n: usize, centers: &[Vec<f64>], sigma: f64, rng: &mut Rng) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::arg("blobs need at least 2 points"));
    }
    let d = centers.first().map(Vec::len).ok_or_else(|| Error::arg("no blob centers"))?;
    if centers.iter().any(|c| c.len() != d) {
        return Err(Error::shape("blob centers differ in dimension"));
    }
    let k = centers.len();
    let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    let x = Matrix::from_fn(n, d, |i, j| centers[i % k][j] + sigma * rng.normal());
    Dataset::new(x, labels, k)
}
