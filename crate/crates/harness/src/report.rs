use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Method;
use crate::error::{HarnessError, HarnessResult};

/// Severity tag of the pooled row.
pub const POOLED: &str = "all";
/// Severity tag of the out-of-distribution row.
pub const OOD: &str = "ood";
/// Seed tag of rows averaged over successful seeds.
pub const MEAN: &str = "mean";
/// Seed tag of the row listing seeds left out of the mean.
pub const FOOTNOTE: &str = "footnote";

/// One line of `report.csv`. Metrics are empty where undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: Method,
    pub strength: f64,
    /// A seed, `mean` or `footnote`.
    pub seed: String,
    /// A severity level, `all` for the pooled schedule, `ood` for OOD detection.
    pub severity: String,
    pub status: String,
    pub accuracy: Option<f64>,
    pub auroc: Option<f64>,
    pub aupr: Option<f64>,
    pub ece: Option<f64>,
    pub brier: Option<f64>,
    pub aulc: Option<f64>,
    pub raulc: Option<f64>,
    /// Wall-clock time; kept out of `report.csv`, which must be reproducible.
    #[serde(skip)]
    pub runtime_ms: Option<f64>,
}

impl ReportRow {
    pub fn new(method: Method, strength: f64, seed: impl Into<String>, severity: impl Into<String>) -> Self {
        ReportRow {
            method,
            strength,
            seed: seed.into(),
            severity: severity.into(),
            status: "ok".into(),
            accuracy: None,
            auroc: None,
            aupr: None,
            ece: None,
            brier: None,
            aulc: None,
            raulc: None,
            runtime_ms: None,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    /// Numeric severity level, if this is a per-severity row.
    pub fn level(&self) -> Option<usize> {
        self.severity.parse().ok()
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "accuracy" => self.accuracy,
            "auroc" => self.auroc,
            "aupr" => self.aupr,
            "ece" => self.ece,
            "brier" => self.brier,
            "aulc" => self.aulc,
            "raulc" => self.raulc,
            _ => None,
        }
    }
}

pub const METRICS: [&str; 7] = ["accuracy", "auroc", "aupr", "ece", "brier", "aulc", "raulc"];

fn csv_err(e: csv::Error) -> HarnessError {
    HarnessError::Core(dum_core::Error::Format { offset: e.position().map_or(0, |p| p.byte()), message: e.to_string() })
}

pub fn write_report_csv<W: Write>(out: W, rows: &[ReportRow]) -> HarnessResult<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_report_csv<R: Read>(input: R) -> HarnessResult<Vec<ReportRow>> {
    csv::Reader::from_reader(input).deserialize().map(|r| r.map_err(csv_err)).collect()
}

/// Wall-clock costs of one job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub method: Method,
    pub strength: f64,
    pub seed: u64,
    pub train_ms: f64,
    /// Inference time per test sample on clean data.
    pub inference_ms_per_sample: f64,
    pub forward_passes: usize,
}

pub fn write_timing_csv<W: Write>(out: W, rows: &[TimingRow]) -> HarnessResult<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 48.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Rows drawn in charts: seed means when present, otherwise per-seed rows.
fn chart_rows(rows: &[ReportRow]) -> Vec<&ReportRow> {
    let has_mean = rows.iter().any(|r| r.seed == MEAN);
    rows.iter().filter(|r| r.level().is_some() && r.is_ok() && (r.seed == MEAN) == has_mean).collect()
}

/// Line chart of `metric` against severity level, one series per method,
/// strength and (without seed means) seed. `None` when no row defines it.
pub fn render_chart(rows: &[ReportRow], metric: &str) -> Option<String> {
    let picked = chart_rows(rows);
    let with_seed = picked.iter().any(|r| r.seed != MEAN);
    let mut series: BTreeMap<(Method, u64, String), Vec<(usize, f64)>> = BTreeMap::new();
    for r in &picked {
        if let (Some(level), Some(v)) = (r.level(), r.metric(metric)) {
            let seed = if with_seed { r.seed.clone() } else { String::new() };
            series.entry((r.method, r.strength.to_bits(), seed)).or_default().push((level, v));
        }
    }
    if series.is_empty() {
        return None;
    }
    let labels: Vec<String> = series
        .keys()
        .map(|(m, s, seed)| {
            let mut label = format!("{m} λ={}", f64::from_bits(*s));
            if with_seed {
                let _ = write!(label, " seed {seed}");
            }
            label
        })
        .collect();
    let pts = series.values().flatten();
    let x_max = pts.clone().map(|p| p.0).max().unwrap_or(0).max(1) as f64;
    let (mut y_lo, mut y_hi) = pts.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    if y_hi - y_lo < 1e-9 {
        y_lo -= 0.5;
        y_hi += 0.5;
    }
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + pw * x / x_max;
    let sy = |y: f64| TOP + ph * (1.0 - (y - y_lo) / (y_hi - y_lo));

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="20" font-size="14" text-anchor="middle">{metric} vs severity</text>"#,
        LEFT + pw / 2.0
    );
    let _ = writeln!(
        svg,
        r#"<path d="M{LEFT:.1},{TOP:.1} V{:.1} H{:.1}" fill="none" stroke="black"/>"#,
        TOP + ph,
        LEFT + pw
    );
    for level in 0..=x_max as usize {
        let x = sx(level as f64);
        let _ = writeln!(svg, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{level}</text>"#, TOP + ph + 16.0);
    }
    for i in 0..=4 {
        let v = y_lo + (y_hi - y_lo) * i as f64 / 4.0;
        let y = sy(v);
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.3}</text>"#, LEFT - 6.0, y + 4.0);
        let _ = writeln!(svg, r##"<path d="M{LEFT:.1},{y:.1} H{:.1}" stroke="#dddddd"/>"##, LEFT + pw);
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">severity level</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 10.0
    );
    for (i, (points, label)) in series.values().zip(&labels).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts = points.clone();
        pts.sort_by_key(|p| p.0);
        if pts.len() > 1 {
            let d: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x as f64), sy(y))).collect();
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                d.join(" ")
            );
        }
        for &(x, y) in &pts {
            let _ = writeln!(svg, r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="{color}"/>"#, sx(x as f64), sy(y));
        }
        let ly = TOP + 14.0 * i as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(svg, r#"<rect x="{lx:.1}" y="{:.1}" width="10" height="10" fill="{color}"/>"#, ly - 9.0);
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{ly:.1}">{}</text>"#, lx + 14.0, escape(label));
    }
    svg.push_str("</svg>\n");
    Some(svg)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes `report.csv` and one `charts/<metric>.svg` per defined metric.
pub fn emit_report(dir: &Path, rows: &[ReportRow]) -> HarnessResult<()> {
    if rows.is_empty() {
        return Err(dum_core::Error::Argument("no report rows to emit".into()).into());
    }
    fs::create_dir_all(dir)?;
    write_report_csv(fs::File::create(dir.join("report.csv"))?, rows)?;
    emit_charts(dir, rows)
}

pub fn emit_charts(dir: &Path, rows: &[ReportRow]) -> HarnessResult<()> {
    let charts = dir.join("charts");
    fs::create_dir_all(&charts)?;
    for metric in METRICS {
        if let Some(svg) = render_chart(rows, metric) {
            fs::write(charts.join(format!("{metric}.svg")), svg)?;
        }
    }
    Ok(())
}
