use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const DEFAULT_ECE_BINS: usize = 15;

/// Expected calibration error over `bins` equal-width confidence bins;
/// confidence `c` falls in bin `min(⌊c·B⌋, B−1)`.
pub fn ece(confidences: &[f64], correct: &[bool], bins: usize) -> Result<f64> {
    if bins == 0 {
        return Err(Error::arg("ECE needs at least one bin"));
    }
    if confidences.len() != correct.len() {
        return Err(Error::shape(format!("{} confidences, {} outcomes", confidences.len(), correct.len())));
    }
    if confidences.is_empty() {
        return Err(Error::undefined("ECE of an empty set"));
    }
    if let Some(c) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(Error::arg(format!("confidence {c} outside [0, 1]")));
    }
    let mut count = vec![0usize; bins];
    let mut hits = vec![0.0; bins];
    let mut conf = vec![0.0; bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let b = ((c * bins as f64).floor() as usize).min(bins - 1);
        count[b] += 1;
        conf[b] += c;
        if ok {
            hits[b] += 1.0;
        }
    }
    let n = confidences.len() as f64;
    Ok((0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let m = count[b] as f64;
            (m / n) * (hits[b] / m - conf[b] / m).abs()
        })
        .sum())
}

/// Mean over samples of `Σₖ (pₖ − 1[y = k])²`.
pub fn brier(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    if probs.rows() != labels.len() {
        return Err(Error::shape(format!("{} rows, {} labels", probs.rows(), labels.len())));
    }
    if labels.is_empty() {
        return Err(Error::undefined("Brier score of an empty set"));
    }
    let mut total = 0.0;
    for (row, &y) in probs.iter_rows().zip(labels) {
        if y >= row.len() {
            return Err(Error::arg(format!("label {y} outside {} classes", row.len())));
        }
        total += row.iter().enumerate().map(|(k, &p)| (p - if k == y { 1.0 } else { 0.0 }).powi(2)).sum::<f64>();
    }
    Ok(total / labels.len() as f64)
}
