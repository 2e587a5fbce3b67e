use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use dum_core::data::{Dataset, ShiftSchedule};
use dum_core::heads::HeadOutput;
use dum_core::metrics::{
    accuracy, aulc, aupr, auroc, brier, ece, lifted_curve, pearson, raulc, spearman, write_records_csv, EvalRecord,
    DEFAULT_ECE_BINS,
};
use dum_core::{Matrix, Rng};

use crate::config::{ExperimentConfig, Method};
use crate::datasets::{load, LoadedData};
use crate::error::{HarnessError, HarnessResult};
use crate::methods::{train_model, TrainedModel};
use crate::report::{emit_report, write_timing_csv, ReportRow, TimingRow, FOOTNOTE, MEAN, OOD, POOLED};

const DATA_STREAM: u64 = 0xda7a;
const OOD_STREAM: u64 = 0x00d;
const EVAL_STREAM: u64 = 0xe7a1;
const TRAIN_STREAM: u64 = 0x7a1;

/// Which evaluations a run performs after training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stages {
    pub shift: bool,
    pub ood: bool,
}

impl Stages {
    pub const ALL: Stages = Stages { shift: true, ood: true };
    pub const CLEAN: Stages = Stages { shift: false, ood: false };
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub jobs: usize,
    pub stages: Stages,
    /// Directory of per-job checkpoints: loaded when present, written after training.
    pub checkpoints: Option<PathBuf>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { jobs: 1, stages: Stages::ALL, checkpoints: None }
    }
}

/// Everything one (seed, strength) job produced.
#[derive(Debug, Clone)]
pub struct JobOutcome {
    pub seed: u64,
    pub strength: f64,
    /// Per-severity rows followed by the pooled and OOD rows.
    pub rows: Vec<ReportRow>,
    /// Record logs indexed by severity level.
    pub records: Vec<Vec<EvalRecord>>,
    pub timing: Option<TimingRow>,
    pub failure: Option<String>,
    pub diverged: bool,
}

impl JobOutcome {
    pub fn is_ok(&self) -> bool {
        self.failure.is_none()
    }

    pub fn pooled(&self) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.severity == POOLED)
    }

    pub fn clean(&self) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.severity == "0")
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: ExperimentConfig,
    pub jobs: Vec<JobOutcome>,
    pub rows: Vec<ReportRow>,
}

impl RunOutput {
    pub fn failures(&self) -> impl Iterator<Item = &JobOutcome> {
        self.jobs.iter().filter(|j| !j.is_ok())
    }
}

fn metric_or_none(r: dum_core::Result<f64>) -> HarnessResult<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(dum_core::Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn records_for(out: &HeadOutput, labels: &[usize], severity: usize) -> Vec<EvalRecord> {
    let preds = out.predictions();
    let conf = out.confidences();
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let mut r = EvalRecord::new(out.uncertainty[i], preds[i] == y);
            r.severity = severity;
            r.confidence = Some(conf[i]);
            r.probs = Some(out.probs.row(i).to_vec());
            r
        })
        .collect()
}

/// Accuracy, calibration and lifted-curve metrics of a record log.
pub fn score_records(row: &mut ReportRow, records: &[EvalRecord], labels: &[usize]) -> HarnessResult<()> {
    row.accuracy = metric_or_none(accuracy(records))?;
    let conf: Vec<f64> = records.iter().map(|r| r.confidence.unwrap_or(f64::NAN)).collect();
    let correct: Vec<bool> = records.iter().map(|r| r.correct).collect();
    if conf.iter().all(|c| c.is_finite()) {
        row.ece = metric_or_none(ece(&conf, &correct, DEFAULT_ECE_BINS))?;
    }
    if let Some(probs) = records.iter().map(|r| r.probs.clone()).collect::<Option<Vec<_>>>() {
        row.brier = metric_or_none(brier(&Matrix::from_rows(&probs)?, labels))?;
    }
    if !records.is_empty() {
        let curve = lifted_curve(records, 1.0 / records.len() as f64)?;
        row.aulc = metric_or_none(aulc(&curve))?;
        row.raulc = metric_or_none(raulc(&curve))?;
    }
    Ok(())
}

/// AUROC/AUPR of uncertainty as a detector with the OOD set as positives.
pub fn ood_scores(in_uncertainty: &[f64], ood_uncertainty: &[f64]) -> HarnessResult<(Option<f64>, Option<f64>)> {
    Ok((
        metric_or_none(auroc(ood_uncertainty, in_uncertainty))?,
        metric_or_none(aupr(ood_uncertainty, in_uncertainty))?,
    ))
}

fn job_name(seed: u64, strength: f64) -> String {
    format!("seed{seed}_strength{strength}")
}

struct JobContext<'a> {
    config: &'a ExperimentConfig,
    options: &'a RunOptions,
}

impl JobContext<'_> {
    fn obtain_model(&self, seed: u64, strength: f64, data: &LoadedData) -> HarnessResult<(TrainedModel, f64)> {
        let ckpt = self.options.checkpoints.as_ref().map(|d| d.join(format!("{}.json", job_name(seed, strength))));
        if let Some(path) = ckpt.as_ref().filter(|p| p.exists()) {
            let model = TrainedModel::load(path)?;
            if model.method != self.config.method || model.strength.to_bits() != strength.to_bits() {
                return Err(HarnessError::Config(format!("{} belongs to another method or strength", path.display())));
            }
            return Ok((model, 0.0));
        }
        // Shared across strengths: a sweep compares models that differ only
        // in the regularizer, not in initialization or batch order.
        let mut rng = Rng::new(seed).fork(TRAIN_STREAM);
        let start = Instant::now();
        let model = train_model(self.config, strength, &data.train, data.image_side, &mut rng)?;
        let train_ms = start.elapsed().as_secs_f64() * 1e3;
        if let Some(path) = ckpt {
            fs::create_dir_all(path.parent().expect("checkpoint has a directory"))?;
            model.save(&path)?;
        }
        Ok((model, train_ms))
    }

    fn run(&self, seed: u64, strength: f64) -> HarnessResult<JobOutcome> {
        let config = self.config;
        let method = config.method;
        let data = load(&config.dataset, &mut Rng::new(seed).fork(DATA_STREAM))?;
        let (model, train_ms) = self.obtain_model(seed, strength, &data)?;
        let test = &data.test;
        let schedule = match (&config.shift, self.options.stages.shift) {
            (Some(s), true) => s.clone(),
            _ => ShiftSchedule { kind: dum_core::data::ShiftKind::Rotation, severities: vec![0.0] },
        };
        let side = data.image_side.unwrap_or(0);
        let mut rows = Vec::new();
        let mut records = Vec::new();
        let mut timing = None;
        for level in 0..schedule.len() {
            let mut eval_rng = Rng::new(seed).fork(EVAL_STREAM + level as u64);
            let shifted = if level == 0 { test.clone() } else { schedule.apply(test, level, side, &mut eval_rng)? };
            let start = Instant::now();
            let out = model.predict(&shifted.inputs, &mut eval_rng)?;
            if level == 0 {
                timing = Some(TimingRow {
                    method,
                    strength,
                    seed,
                    train_ms,
                    inference_ms_per_sample: start.elapsed().as_secs_f64() * 1e3 / test.len().max(1) as f64,
                    forward_passes: model.forward_passes(),
                });
            }
            let recs = records_for(&out, &shifted.labels, level);
            let mut row = ReportRow::new(method, strength, seed.to_string(), level.to_string());
            score_records(&mut row, &recs, &shifted.labels)?;
            rows.push(row);
            records.push(recs);
        }
        if schedule.len() > 1 {
            let pooled: Vec<EvalRecord> = records.iter().flatten().cloned().collect();
            let labels = pooled_labels(test, schedule.len());
            let mut row = ReportRow::new(method, strength, seed.to_string(), POOLED);
            score_records(&mut row, &pooled, &labels)?;
            rows.push(row);
        }
        if let (Some(spec), true) = (&config.ood, self.options.stages.ood) {
            let ood = load(spec, &mut Rng::new(seed).fork(OOD_STREAM))?.test;
            if ood.dim() != test.dim() {
                return Err(HarnessError::Config(format!(
                    "OOD inputs have {} dims, training data {}",
                    ood.dim(),
                    test.dim()
                )));
            }
            let mut eval_rng = Rng::new(seed).fork(OOD_STREAM);
            let u_in = model.predict(&test.inputs, &mut eval_rng)?.uncertainty;
            let u_ood = model.predict(&ood.inputs, &mut eval_rng)?.uncertainty;
            let mut row = ReportRow::new(method, strength, seed.to_string(), OOD);
            (row.auroc, row.aupr) = ood_scores(&u_in, &u_ood)?;
            rows.push(row);
        }
        Ok(JobOutcome { seed, strength, rows, records, timing, failure: None, diverged: false })
    }
}

fn failed_outcome(method: Method, seed: u64, strength: f64, err: &HarnessError) -> JobOutcome {
    let mut row = ReportRow::new(method, strength, seed.to_string(), "-");
    let kind = if err.is_divergence() { "diverged" } else { "error" };
    row.status = format!("failed ({kind})");
    JobOutcome {
        seed,
        strength,
        rows: vec![row],
        records: Vec::new(),
        timing: None,
        failure: Some(err.to_string()),
        diverged: err.is_divergence(),
    }
}

/// Runs every (strength, seed) job, `jobs` at a time. Results are in
/// strength-major, seed-minor order regardless of scheduling. Configuration
/// errors abort the run; training and evaluation failures mark the job failed.
pub fn run_jobs(config: &ExperimentConfig, options: &RunOptions) -> HarnessResult<Vec<JobOutcome>> {
    config.validate()?;
    let tasks: Vec<(f64, u64)> =
        config.strengths.iter().flat_map(|&s| config.seeds.iter().map(move |&seed| (s, seed))).collect();
    let ctx = JobContext { config, options };
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<HarnessResult<JobOutcome>>>> = Mutex::new((0..tasks.len()).map(|_| None).collect());
    let workers = options.jobs.clamp(1, tasks.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(strength, seed)) = tasks.get(i) else { break };
                let result = match ctx.run(seed, strength) {
                    Err(e @ HarnessError::Config(_)) => Err(e),
                    Err(e) => Ok(failed_outcome(config.method, seed, strength, &e)),
                    ok => ok,
                };
                slots.lock().expect("no worker panicked")[i] = Some(result);
            });
        }
    });
    slots.into_inner().expect("no worker panicked").into_iter().map(|s| s.expect("every task ran")).collect()
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Per-seed rows plus, per strength, seed means over successful jobs and a
/// footnote row naming the seeds that were left out.
pub fn assemble_rows(method: Method, strengths: &[f64], jobs: &[JobOutcome]) -> Vec<ReportRow> {
    let mut rows = Vec::new();
    for &s in strengths {
        let group: Vec<&JobOutcome> = jobs.iter().filter(|j| j.strength.to_bits() == s.to_bits()).collect();
        group.iter().for_each(|j| rows.extend(j.rows.iter().cloned()));
        let ok: Vec<&JobOutcome> = group.iter().copied().filter(|j| j.is_ok()).collect();
        if group.len() > 1 && !ok.is_empty() {
            for template in &ok[0].rows {
                let same: Vec<&ReportRow> =
                    ok.iter().filter_map(|j| j.rows.iter().find(|r| r.severity == template.severity)).collect();
                let mut m = ReportRow::new(method, s, MEAN, template.severity.clone());
                m.accuracy = mean_of(same.iter().map(|r| r.accuracy));
                m.auroc = mean_of(same.iter().map(|r| r.auroc));
                m.aupr = mean_of(same.iter().map(|r| r.aupr));
                m.ece = mean_of(same.iter().map(|r| r.ece));
                m.brier = mean_of(same.iter().map(|r| r.brier));
                m.aulc = mean_of(same.iter().map(|r| r.aulc));
                m.raulc = mean_of(same.iter().map(|r| r.raulc));
                rows.push(m);
            }
        }
        let failed: Vec<String> = group.iter().filter(|j| !j.is_ok()).map(|j| j.seed.to_string()).collect();
        if !failed.is_empty() {
            let mut f = ReportRow::new(method, s, FOOTNOTE, "-");
            f.status = format!("seeds {} failed and are excluded from the mean", failed.join(" "));
            rows.push(f);
        }
    }
    rows
}

/// Trains and evaluates every job of `config`.
pub fn run_experiment(config: &ExperimentConfig, options: &RunOptions) -> HarnessResult<RunOutput> {
    let jobs = run_jobs(config, options)?;
    let rows = assemble_rows(config.method, &config.strengths, &jobs);
    Ok(RunOutput { config: config.clone(), jobs, rows })
}

/// Only the OOD rows of an experiment (shift evaluation skipped).
pub fn run_ood(config: &ExperimentConfig, jobs: usize) -> HarnessResult<Vec<ReportRow>> {
    if config.ood.is_none() {
        return Err(HarnessError::Config("run_ood needs an ood dataset".into()));
    }
    let options = RunOptions { jobs, stages: Stages { shift: false, ood: true }, checkpoints: None };
    let out = run_experiment(config, &options)?;
    Ok(out.rows.into_iter().filter(|r| r.severity == OOD || !r.is_ok()).collect())
}

/// Strength/rAULC pairs with their correlations.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub method: Method,
    pub strengths: Vec<f64>,
    /// Pooled rAULC averaged over successful seeds, per strength.
    pub raulc: Vec<Option<f64>>,
    /// Clean test accuracy averaged over successful seeds, per strength.
    pub accuracy: Vec<Option<f64>>,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
}

/// Pearson and Spearman correlation between strengths and rAULC values,
/// over the strengths where rAULC is defined.
pub fn correlate(strengths: &[f64], raulc: &[Option<f64>]) -> HarnessResult<(Option<f64>, Option<f64>)> {
    let (x, y): (Vec<f64>, Vec<f64>) = strengths.iter().zip(raulc).filter_map(|(&s, r)| r.map(|r| (s, r))).unzip();
    Ok((metric_or_none(pearson(&x, &y))?, metric_or_none(spearman(&x, &y))?))
}

pub fn summarize_sweep(method: Method, strengths: &[f64], jobs: &[JobOutcome]) -> HarnessResult<SweepSummary> {
    let per = |f: &dyn Fn(&JobOutcome) -> Option<f64>| -> Vec<Option<f64>> {
        strengths
            .iter()
            .map(|s| mean_of(jobs.iter().filter(|j| j.is_ok() && j.strength.to_bits() == s.to_bits()).map(f)))
            .collect()
    };
    let raulc = per(&|j| j.pooled().and_then(|r| r.raulc));
    let accuracy = per(&|j| j.clean().and_then(|r| r.accuracy));
    let (pearson, spearman) = correlate(strengths, &raulc)?;
    Ok(SweepSummary { method, strengths: strengths.to_vec(), raulc, accuracy, pearson, spearman })
}

/// Trains one model per strength and seed, pools rAULC over the shift
/// schedule and correlates it with the strength.
pub fn sensitivity_sweep(config: &ExperimentConfig, options: &RunOptions) -> HarnessResult<(RunOutput, SweepSummary)> {
    if config.strengths.len() < 3 {
        return Err(HarnessError::Config("a sensitivity sweep needs at least 3 strengths".into()));
    }
    if config.shift.as_ref().is_none_or(|s| s.len() < 2) {
        return Err(HarnessError::Config("a sensitivity sweep needs a shift schedule".into()));
    }
    let out = run_experiment(config, options)?;
    let summary = summarize_sweep(config.method, &config.strengths, &out.jobs)?;
    Ok((out, summary))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_sweep_csv(path: &Path, s: &SweepSummary) -> HarnessResult<()> {
    let mut text = String::from("method,strength,accuracy,raulc\n");
    for ((st, acc), r) in s.strengths.iter().zip(&s.accuracy).zip(&s.raulc) {
        text.push_str(&format!("{},{},{},{}\n", s.method, st, fmt_opt(*acc), fmt_opt(*r)));
    }
    text.push_str(&format!("{},pearson,,{}\n", s.method, fmt_opt(s.pearson)));
    text.push_str(&format!("{},spearman,,{}\n", s.method, fmt_opt(s.spearman)));
    fs::write(path, text)?;
    Ok(())
}

/// Writes `report.csv`, `charts/`, `timing.csv`, the resolved config and
/// `records/<job>/severity_<k>.csv` under `dir`.
pub fn write_run(dir: &Path, out: &RunOutput) -> HarnessResult<()> {
    emit_report(dir, &out.rows)?;
    fs::write(dir.join("config.json"), out.config.to_json())?;
    let timing: Vec<TimingRow> = out.jobs.iter().filter_map(|j| j.timing.clone()).collect();
    write_timing_csv(fs::File::create(dir.join("timing.csv"))?, &timing)?;
    for job in out.jobs.iter().filter(|j| j.is_ok()) {
        let jd = dir.join("records").join(job_name(job.seed, job.strength));
        fs::create_dir_all(&jd)?;
        for (level, recs) in job.records.iter().enumerate() {
            write_records_csv(fs::File::create(jd.join(format!("severity_{level}.csv")))?, recs)?;
        }
    }
    Ok(())
}

/// Labels of a dataset repeated once per severity level, matching a pooled
/// record log.
pub fn pooled_labels(test: &Dataset, levels: usize) -> Vec<usize> {
    (0..levels).flat_map(|_| test.labels.iter().copied()).collect()
}
