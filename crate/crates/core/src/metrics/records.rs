use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One evaluated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub uncertainty: f64,
    pub correct: bool,
    pub in_distribution: bool,
    /// Shift level; 0 is clean data.
    pub severity: usize,
    pub confidence: Option<f64>,
    #[serde(skip)]
    pub probs: Option<Vec<f64>>,
}

impl EvalRecord {
    pub fn new(uncertainty: f64, correct: bool) -> Self {
        EvalRecord { uncertainty, correct, in_distribution: true, severity: 0, confidence: None, probs: None }
    }
}

pub fn accuracy(records: &[EvalRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::undefined("accuracy of an empty record set"));
    }
    Ok(records.iter().filter(|r| r.correct).count() as f64 / records.len() as f64)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format { offset: e.position().map_or(0, |p| p.byte()), message: e.to_string() }
}

/// Writes records with the header
/// `uncertainty,correct,in_distribution,severity,confidence`.
pub fn write_records_csv<W: Write>(out: W, records: &[EvalRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if records.is_empty() {
        w.write_record(["uncertainty", "correct", "in_distribution", "severity", "confidence"]).map_err(csv_err)?;
    }
    for r in records {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records_csv<R: Read>(input: R) -> Result<Vec<EvalRecord>> {
    csv::Reader::from_reader(input).deserialize().map(|r| r.map_err(csv_err)).collect()
}
