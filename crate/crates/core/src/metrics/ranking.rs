use std::cmp::Ordering;

use crate::error::{Error, Result};

use super::correlation::average_ranks;

fn check(pos: &[f64], neg: &[f64]) -> Result<()> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::undefined("need at least one positive and one negative score"));
    }
    if pos.iter().chain(neg).any(|s| !s.is_finite()) {
        return Err(Error::arg("scores must be finite"));
    }
    Ok(())
}

/// `P(s⁺ > s⁻) + ½ P(s⁺ = s⁻)`, positives being the samples expected to
/// score higher (errors, OOD inputs).
pub fn auroc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    check(pos, neg)?;
    let all: Vec<f64> = pos.iter().chain(neg).copied().collect();
    let ranks = average_ranks(&all);
    let np = pos.len() as f64;
    let nn = neg.len() as f64;
    let rank_sum: f64 = ranks[..pos.len()].iter().sum();
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Area under the precision–recall curve of the positives.
///
/// Thresholds sweep the distinct scores from high to low; tied scores enter
/// together. The curve starts at recall 0 with the precision of the first
/// threshold and is integrated with the trapezoid rule over recall.
pub fn aupr(pos: &[f64], neg: &[f64]) -> Result<f64> {
    check(pos, neg)?;
    let mut all: Vec<(f64, bool)> = pos.iter().map(|&s| (s, true)).chain(neg.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));
    let total_pos = pos.len() as f64;
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut prev: Option<(f64, f64)> = None;
    let mut area = 0.0;
    let mut i = 0;
    while i < all.len() {
        let s = all[i].0;
        while i < all.len() && all[i].0 == s {
            if all[i].1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let recall = tp / total_pos;
        let precision = tp / (tp + fp);
        let (r0, p0) = prev.unwrap_or((0.0, precision));
        area += (recall - r0) * (precision + p0) / 2.0;
        prev = Some((recall, precision));
    }
    Ok(area)
}
