//! Independent reference implementations shared by the integration tests.
#![allow(dead_code, clippy::neg_cmp_op_on_partial_ord)]

use dum_core::metrics::{
    aulc, aupr, auroc, average_ranks, brier, ece, lifted_curve, pearson, raulc, raulc_of_records, spearman, EvalRecord,
};
use dum_core::{Matrix, Rng};

pub mod gradcheck;
pub mod oracles;

/// Central finite difference of `f` along every coordinate of `x`.
pub fn finite_differences(x: &[f64], eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + eps;
            let up = f(&p);
            p[i] = orig - eps;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Exhaustive pair counting.
pub fn auroc_pairs(pos: &[f64], neg: &[f64]) -> f64 {
    let mut s = 0.0;
    for p in pos {
        for n in neg {
            s += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    s / (pos.len() * neg.len()) as f64
}

/// Precision–recall area from a sweep over every distinct threshold, each
/// point recomputed from scratch.
pub fn aupr_sweep(pos: &[f64], neg: &[f64]) -> f64 {
    let mut thresholds: Vec<f64> = pos.iter().chain(neg).copied().collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let mut points = Vec::new();
    for t in thresholds {
        let tp = pos.iter().filter(|&&s| s >= t).count() as f64;
        let fp = neg.iter().filter(|&&s| s >= t).count() as f64;
        points.push((tp / pos.len() as f64, tp / (tp + fp)));
    }
    let mut area = 0.0;
    let (mut r0, mut p0) = (0.0, points[0].1);
    for (r, p) in points {
        area += (r - r0) * (p + p0) / 2.0;
        r0 = r;
        p0 = p;
    }
    area
}

/// ECE by scanning each bin's interval directly.
pub fn ece_scan(conf: &[f64], correct: &[bool], bins: usize) -> f64 {
    let n = conf.len() as f64;
    let mut total = 0.0;
    for b in 0..bins {
        let lo = b as f64 / bins as f64;
        let hi = (b + 1) as f64 / bins as f64;
        let members: Vec<usize> = (0..conf.len())
            .filter(|&i| {
                let c = conf[i];
                if b + 1 == bins {
                    c >= lo
                } else {
                    c >= lo && c < hi
                }
            })
            .collect();
        if members.is_empty() {
            continue;
        }
        let m = members.len() as f64;
        let acc = members.iter().filter(|&&i| correct[i]).count() as f64 / m;
        let avg = members.iter().map(|&i| conf[i]).sum::<f64>() / m;
        total += m / n * (acc - avg).abs();
    }
    total
}

pub fn brier_loop(probs: &[Vec<f64>], labels: &[usize]) -> f64 {
    let mut s = 0.0;
    for (p, &y) in probs.iter().zip(labels) {
        for (k, &pk) in p.iter().enumerate() {
            let t = if k == y { 1.0 } else { 0.0 };
            s += (pk - t) * (pk - t);
        }
    }
    s / labels.len() as f64
}

/// Accuracy of the `⌈q N⌉` least uncertain records, selected by repeated
/// minimum search (ties resolved toward the earlier record).
pub fn prefix_accuracy_enumerated(records: &[EvalRecord], k: usize) -> f64 {
    let mut taken = vec![false; records.len()];
    let mut hits = 0;
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for i in 0..records.len() {
            if taken[i] {
                continue;
            }
            if best.is_none_or(|b| records[i].uncertainty < records[b].uncertainty) {
                best = Some(i);
            }
        }
        let b = best.unwrap();
        taken[b] = true;
        hits += records[b].correct as usize;
    }
    hits as f64 / k as f64
}

/// AULC with `s = 1/N`, built by enumerating every prefix.
pub fn aulc_enumerated(records: &[EvalRecord]) -> f64 {
    let n = records.len();
    let acc = records.iter().filter(|r| r.correct).count() as f64 / n as f64;
    -1.0 + (1..=n).map(|k| prefix_accuracy_enumerated(records, k) / (n as f64 * acc)).sum::<f64>()
}

/// AULC of the ordering that lists every correct record first.
pub fn aulc_optimal_enumerated(records: &[EvalRecord]) -> f64 {
    let n = records.len();
    let hits = records.iter().filter(|r| r.correct).count();
    let acc = hits as f64 / n as f64;
    -1.0 + (1..=n).map(|k| (k.min(hits) as f64 / k as f64) / (n as f64 * acc)).sum::<f64>()
}

/// Rank of `xᵢ` as `1 + #{xⱼ < xᵢ} + ½ #{j ≠ i : xⱼ = xᵢ}`.
pub fn naive_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .enumerate()
        .map(|(i, &xi)| {
            let less = x.iter().filter(|&&v| v < xi).count() as f64;
            let ties = x.iter().enumerate().filter(|&(j, &v)| j != i && v == xi).count() as f64;
            1.0 + less + 0.5 * ties
        })
        .collect()
}

/// Textbook two-pass product-moment correlation.
pub fn pearson_two_pass(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

pub fn spearman_naive(x: &[f64], y: &[f64]) -> f64 {
    pearson_two_pass(&naive_ranks(x), &naive_ranks(y))
}

/// Outcome of a randomized oracle comparison.
#[derive(Debug, Default)]
pub struct SuiteReport {
    pub checks: usize,
    pub max_error: f64,
    pub failures: Vec<String>,
}

impl SuiteReport {
    pub fn compare(&mut self, what: &str, got: f64, want: f64, tol: f64) {
        self.checks += 1;
        let err = (got - want).abs();
        if err.is_finite() {
            self.max_error = self.max_error.max(err);
        }
        if !(err <= tol) {
            self.failures.push(format!("{what}: {got} vs oracle {want}"));
        }
    }

    pub fn require(&mut self, what: &str, ok: bool) {
        self.checks += 1;
        if !ok {
            self.failures.push(what.to_string());
        }
    }

    /// Every coordinate must agree within `max(abs, rel·|numeric|)`.
    pub fn gradients(&mut self, what: &str, analytic: &[f64], numeric: &[f64], abs: f64, rel: f64) {
        if analytic.len() != numeric.len() {
            self.require(&format!("{what}: {} analytic vs {} numeric entries", analytic.len(), numeric.len()), false);
            return;
        }
        for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
            self.compare(&format!("{what}[{i}]"), a, n, abs.max(rel * n.abs()));
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn assert_passed(&self) {
        assert!(
            self.passed(),
            "{} of {} checks failed:\n{}",
            self.failures.len(),
            self.checks,
            self.failures.join("\n")
        );
    }

    pub fn summary(&self) -> String {
        let head = self.failures.first().map_or(String::new(), |f| format!("; first failure: {f}"));
        format!("{} checks, {} failed, max error {:.2e}{head}", self.checks, self.failures.len(), self.max_error)
    }
}

fn scores(rng: &mut Rng, n: usize) -> Vec<f64> {
    // half the instances draw from a tiny grid so ties are common
    if rng.bernoulli(0.5) {
        (0..n).map(|_| rng.index(5) as f64 * 0.25).collect()
    } else {
        (0..n).map(|_| rng.normal()).collect()
    }
}

fn mixed_flags(rng: &mut Rng, n: usize) -> Vec<bool> {
    let mut f: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.6)).collect();
    f[0] = true;
    f[n - 1] = false;
    f
}

fn records_from(u: &[f64], correct: &[bool]) -> Vec<EvalRecord> {
    u.iter().zip(correct).map(|(&u, &c)| EvalRecord::new(u, c)).collect()
}

/// Every ranking, calibration, lifted-curve and correlation metric against
/// its brute-force oracle on `instances` random problems with `N ≤ 64`.
pub fn metric_oracle_suite(seed: u64, instances: usize, tol: f64) -> SuiteReport {
    let mut rep = SuiteReport::default();
    let mut rng = Rng::new(seed);
    for inst in 0..instances {
        let n = 2 + rng.index(63);
        let s = scores(&mut rng, n);
        let flags = mixed_flags(&mut rng, n);
        let pos: Vec<f64> = s.iter().zip(&flags).filter(|p| *p.1).map(|p| *p.0).collect();
        let neg: Vec<f64> = s.iter().zip(&flags).filter(|p| !*p.1).map(|p| *p.0).collect();
        rep.compare(&format!("#{inst} auroc"), auroc(&pos, &neg).unwrap(), auroc_pairs(&pos, &neg), tol);
        rep.compare(&format!("#{inst} aupr"), aupr(&pos, &neg).unwrap(), aupr_sweep(&pos, &neg), tol);

        let conf: Vec<f64> = (0..n)
            .map(|_| match rng.index(10) {
                0 => 1.0,
                1 => 0.0,
                _ => rng.uniform(),
            })
            .collect();
        let bins = 1 + rng.index(20);
        rep.compare(&format!("#{inst} ece"), ece(&conf, &flags, bins).unwrap(), ece_scan(&conf, &flags, bins), tol);

        let k = 2 + rng.index(4);
        let probs: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..k).map(|_| rng.uniform() + 1e-3).collect();
                let t: f64 = raw.iter().sum();
                raw.iter().map(|v| v / t).collect()
            })
            .collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.index(k)).collect();
        let m = Matrix::from_rows(&probs).unwrap();
        rep.compare(&format!("#{inst} brier"), brier(&m, &labels).unwrap(), brier_loop(&probs, &labels), tol);

        let recs = records_from(&s, &flags);
        let curve = lifted_curve(&recs, 1.0 / n as f64).unwrap();
        let oracle_aulc = aulc_enumerated(&recs);
        rep.compare(&format!("#{inst} aulc"), aulc(&curve).unwrap(), oracle_aulc, tol);
        rep.compare(
            &format!("#{inst} raulc"),
            raulc(&curve).unwrap(),
            oracle_aulc / aulc_optimal_enumerated(&recs),
            tol,
        );

        let x: Vec<f64> = scores(&mut rng, n);
        let y: Vec<f64> = x.iter().map(|v| v * rng.normal() + rng.normal()).collect();
        let ranks = average_ranks(&x);
        let naive = naive_ranks(&x);
        rep.compare(
            &format!("#{inst} ranks"),
            ranks.iter().zip(&naive).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
            0.0,
            tol,
        );
        let want_p = pearson_two_pass(&x, &y);
        match pearson(&x, &y) {
            Ok(p) => rep.compare(&format!("#{inst} pearson"), p, want_p, tol),
            Err(_) => rep.require(&format!("#{inst} pearson undefined only without variance"), !want_p.is_finite()),
        }
        let want_s = spearman_naive(&x, &y);
        match spearman(&x, &y) {
            Ok(r) => rep.compare(&format!("#{inst} spearman"), r, want_s, tol),
            Err(_) => rep.require(&format!("#{inst} spearman undefined only without variance"), !want_s.is_finite()),
        }
    }
    rep
}

/// Calls `f` on every permutation of `items` (Heap's algorithm).
pub fn for_each_permutation<T: Clone>(items: &[T], mut f: impl FnMut(&[T])) {
    let mut a = items.to_vec();
    let n = a.len();
    let mut c = vec![0; n];
    f(&a);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            f(&a);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

/// A random strictly increasing map on the reals.
pub fn random_monotone(rng: &mut Rng) -> Box<dyn Fn(f64) -> f64> {
    let a = 0.1 + rng.uniform() * 3.0;
    let b = rng.normal() * 5.0;
    match rng.index(4) {
        0 => Box::new(move |u| a * u + b),
        1 => Box::new(move |u: f64| (a * u).atan() + b),
        2 => Box::new(move |u: f64| u * u * u + a * u + b),
        _ => Box::new(move |u: f64| (a * u).tanh() * 2.0 + u * 1e-3 + b),
    }
}

/// Definitional properties of rAULC: the oracle ordering scores exactly 1,
/// no ordering of up to 8 records beats the oracle, and strictly increasing
/// transforms of the uncertainty change nothing.
pub fn raulc_definition_suite(seed: u64, transforms: usize) -> SuiteReport {
    let mut rep = SuiteReport::default();
    let mut rng = Rng::new(seed);
    for n in 2..=64 {
        let flags = mixed_flags(&mut rng, n);
        let u: Vec<f64> = flags.iter().map(|&c| if c { rng.uniform() } else { 1.0 + rng.uniform() }).collect();
        let r = raulc_of_records(&records_from(&u, &flags)).unwrap();
        rep.require(&format!("oracle ordering of {n} gives rAULC {r}, not 1"), r == 1.0);
    }
    for n in 2..=8 {
        let flags = mixed_flags(&mut rng, n);
        let best = aulc_optimal_enumerated(&records_from(&vec![0.0; n], &flags));
        let ranks: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let mut worst_excess = f64::NEG_INFINITY;
        for_each_permutation(&ranks, |perm| {
            let recs = records_from(perm, &flags);
            let a = aulc(&lifted_curve(&recs, 1.0 / n as f64).unwrap()).unwrap();
            worst_excess = worst_excess.max(a - best);
        });
        rep.require(
            &format!("a permutation of {n} records beats the oracle AULC by {worst_excess}"),
            worst_excess <= 1e-12,
        );
    }
    for t in 0..transforms {
        let n = 2 + rng.index(63);
        let u = scores(&mut rng, n);
        let flags = mixed_flags(&mut rng, n);
        let f = random_monotone(&mut rng);
        let mapped: Vec<f64> = u.iter().map(|&v| f(v)).collect();
        let before = raulc_of_records(&records_from(&u, &flags)).unwrap();
        let after = raulc_of_records(&records_from(&mapped, &flags)).unwrap();
        rep.require(&format!("transform {t}: rAULC {before} became {after}"), before == after);
        let pos: Vec<usize> = (0..n).filter(|&i| flags[i]).collect();
        let neg: Vec<usize> = (0..n).filter(|&i| !flags[i]).collect();
        let pick = |v: &[f64], idx: &[usize]| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        let (a0, a1) = (auroc(&pick(&u, &pos), &pick(&u, &neg)), auroc(&pick(&mapped, &pos), &pick(&mapped, &neg)));
        rep.require(&format!("transform {t}: AUROC changed"), a0.unwrap() == a1.unwrap());
    }
    rep
}
