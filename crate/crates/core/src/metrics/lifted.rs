use std::cmp::Ordering;

use crate::error::{Error, Result};

use super::EvalRecord;

/// Prefix accuracy of samples ordered by increasing uncertainty.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedCurve {
    /// `qᵢ = i·s`, the last one clamped to 1.
    pub quantiles: Vec<f64>,
    pub step: f64,
    /// `F(qᵢ)`: accuracy of the `⌈qᵢ N⌉` least uncertain samples.
    pub accuracy: Vec<f64>,
    /// `F_R`: overall accuracy, the curve of a random ordering.
    pub baseline: f64,
    /// Curve of the ordering that puts every correct sample first.
    pub optimal: Vec<f64>,
    /// Overall accuracy is zero, so the curve cannot be normalized.
    pub degenerate: bool,
}

fn prefix_accuracy(correct_in_order: &[bool], sizes: &[usize]) -> Vec<f64> {
    let mut cum = Vec::with_capacity(correct_in_order.len() + 1);
    cum.push(0usize);
    for &c in correct_in_order {
        cum.push(cum.last().unwrap() + c as usize);
    }
    sizes.iter().map(|&k| cum[k] as f64 / k as f64).collect()
}

/// Builds the lifted curve. Ties in uncertainty keep their input order.
pub fn lifted_curve(records: &[EvalRecord], step: f64) -> Result<LiftedCurve> {
    if records.is_empty() {
        return Err(Error::arg("lifted curve of an empty record set"));
    }
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::arg(format!("quantile step {step} outside (0, 1]")));
    }
    if records.iter().any(|r| !r.uncertainty.is_finite()) {
        return Err(Error::arg("uncertainties must be finite"));
    }
    let n = records.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| records[a].uncertainty.partial_cmp(&records[b].uncertainty).unwrap_or(Ordering::Equal));
    let sorted: Vec<bool> = order.iter().map(|&i| records[i].correct).collect();

    let count = ((1.0 / step) - 1e-9).ceil().max(1.0) as usize;
    let quantiles: Vec<f64> = (1..=count).map(|i| (i as f64 * step).min(1.0)).collect();
    let sizes: Vec<usize> = quantiles.iter().map(|q| ((q * n as f64 - 1e-9).ceil() as usize).clamp(1, n)).collect();

    let hits = sorted.iter().filter(|&&c| c).count();
    let mut best = vec![false; n];
    best[..hits].iter_mut().for_each(|b| *b = true);
    Ok(LiftedCurve {
        accuracy: prefix_accuracy(&sorted, &sizes),
        optimal: prefix_accuracy(&best, &sizes),
        baseline: hits as f64 / n as f64,
        degenerate: hits == 0,
        quantiles,
        step,
    })
}

fn area(curve: &[f64], step: f64, baseline: f64) -> f64 {
    -1.0 + curve.iter().map(|f| step * f / baseline).sum::<f64>()
}

/// `AULC = −1 + Σᵢ s·F(qᵢ)/F_R(qᵢ)`.
pub fn aulc(curve: &LiftedCurve) -> Result<f64> {
    if curve.degenerate {
        return Err(Error::undefined("AULC with zero accuracy"));
    }
    Ok(area(&curve.accuracy, curve.step, curve.baseline))
}

/// AULC relative to the optimal ordering; 1 for a perfect ranking.
pub fn raulc(curve: &LiftedCurve) -> Result<f64> {
    if curve.degenerate || curve.baseline >= 1.0 {
        return Err(Error::undefined("rAULC needs accuracy strictly between 0 and 1"));
    }
    let opt = area(&curve.optimal, curve.step, curve.baseline);
    if opt <= 0.0 {
        return Err(Error::undefined("optimal AULC is not positive"));
    }
    Ok(aulc(curve)? / opt)
}

/// rAULC with the default step `s = 1/N`.
pub fn raulc_of_records(records: &[EvalRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::undefined("rAULC of an empty record set"));
    }
    raulc(&lifted_curve(records, 1.0 / records.len() as f64)?)
}
