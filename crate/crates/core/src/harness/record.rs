//! Run records: one JSON summary per line, with per-step traces and agent
//! snapshots rendered to CSV.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::eval::EvalSummary;
use crate::approver::QTable;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: u64,
    pub s: usize,
    pub a: usize,
    pub k: usize,
    #[serde(rename = "true")]
    pub true_feedback: f64,
    pub observed: f64,
    pub corruption: f64,
}

/// Q-values, logits or mixture policy after `step` updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: u64,
    pub table: QTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: u64,
    pub greedy_policy: Vec<usize>,
    pub approval_optimal_policy: Vec<usize>,
    /// Spread of `Q − δ` for Q-learners on a myopic target, else `None`.
    pub convergence_gap: Option<f64>,
    pub eval: EvalSummary,
    pub invariant_checks: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: RunConfig,
    pub trace: Vec<TraceRow>,
    pub snapshots: Vec<Snapshot>,
    pub summary: RunSummary,
}

impl RunRecord {
    /// Row-wise `observed = true + corruption`, bit for bit, and increasing steps.
    pub fn check_bookkeeping(&self) -> Result<()> {
        for pair in self.trace.windows(2) {
            if pair[1].step <= pair[0].step {
                return Err(Error::Numerical(format!(
                    "trace steps not increasing at {}",
                    pair[1].step
                )));
            }
        }
        for row in &self.trace {
            if row.observed != row.true_feedback + row.corruption {
                return Err(Error::Numerical(format!(
                    "row {} does not add up",
                    row.step
                )));
            }
        }
        Ok(())
    }
}

pub fn write_trace_csv(path: impl AsRef<Path>, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Long format: one row per `(step, s, k)` entry.
pub fn write_snapshots_csv(path: impl AsRef<Path>, snapshots: &[Snapshot]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["step", "s", "k", "value"])
        .map_err(csv_err)?;
    for snap in snapshots {
        for (s, row) in snap.table.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                w.write_record([
                    snap.step.to_string(),
                    s.to_string(),
                    k.to_string(),
                    v.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv(path: impl AsRef<Path>) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

pub fn csv_err(e: csv::Error) -> Error {
    Error::Input(format!("csv: {e}"))
}

pub fn append_jsonl<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    writeln!(f, "{}", crate::doc::to_line(value))?;
    Ok(())
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let f = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
