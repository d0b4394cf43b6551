//! Run records and report emission.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use lidcert_core::cert::Certificate;
use lidcert_core::nn::ParamVector;

use crate::data::Protocol;
use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Termination {
    Completed,
    /// The new box did not meet the active one; later tasks were skipped.
    EmptyIntersection { task: usize, reason: String },
}

/// State after finishing one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskStep {
    pub task: usize,
    /// Test accuracy on every task seen so far.
    pub test_accuracy: Vec<f64>,
    /// Accuracy on each seen task's certification split.
    pub certification_accuracy: Vec<f64>,
    /// Certificate protecting each seen task, if any.
    pub certificates: Vec<Option<Certificate>>,
    /// Size of the active box; `None` when unconstrained.
    pub lid_size: Option<f64>,
    /// Multiplier per iteration of this task's box computation.
    pub lambda_trace: Vec<f64>,
    /// Snapshots taken and kept by this task's box computation.
    pub snapshots: usize,
    pub checkpoints_kept: usize,
    pub buffer_calls: usize,
    pub param_fingerprint: u64,
}

impl TaskStep {
    pub fn certified_accuracy(&self, task: usize) -> Option<f64> {
        self.certificates.get(task)?.as_ref()?.certified_accuracy()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub per_task_ms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub algorithm: String,
    pub seed: u64,
    pub protocol: Protocol,
    pub config: serde_json::Value,
    pub steps: Vec<TaskStep>,
    /// Tasks finished before any early exit.
    pub completed: usize,
    pub termination: Termination,
    pub final_params: ParamVector,
    /// Wall-clock, kept apart so records compare equal across reruns.
    pub timings: Timings,
}

impl RunRecord {
    pub fn without_timings(&self) -> RunRecord {
        RunRecord {
            timings: Timings::default(),
            ..self.clone()
        }
    }

    /// Accuracy trajectories and parameter fingerprints, for comparing runs
    /// of different algorithms.
    pub fn trajectory(&self) -> Vec<(Vec<f64>, u64)> {
        self.steps.iter().map(|s| (s.test_accuracy.clone(), s.param_fingerprint)).collect()
    }

    pub fn last(&self) -> Option<&TaskStep> {
        self.steps.last()
    }

    /// Mean test accuracy over all seen tasks after the last step.
    pub fn final_average_accuracy(&self) -> Option<f64> {
        let s = self.last()?;
        Some(s.test_accuracy.iter().sum::<f64>() / s.test_accuracy.len() as f64)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| HarnessError::Serialize(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| HarnessError::Serialize(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
    Both,
}

pub const CSV_COLUMNS: [&str; 10] = [
    "algorithm",
    "seed",
    "step",
    "metric",
    "task",
    "value",
    "confidence_beta",
    "n",
    "margin_method",
    "asymptotic",
];

#[derive(Debug, Serialize)]
struct Row<'a> {
    algorithm: &'a str,
    seed: u64,
    step: usize,
    metric: &'static str,
    task: Option<usize>,
    value: f64,
    confidence_beta: Option<f64>,
    n: Option<usize>,
    margin_method: Option<&'a str>,
    asymptotic: Option<bool>,
}

fn rows(r: &RunRecord) -> Vec<Row<'_>> {
    let mut out = Vec::new();
    let plain = |step: usize, metric: &'static str, task: Option<usize>, value: f64| Row {
        algorithm: &r.algorithm,
        seed: r.seed,
        step,
        metric,
        task,
        value,
        confidence_beta: None,
        n: None,
        margin_method: None,
        asymptotic: None,
    };
    for s in &r.steps {
        for (t, &a) in s.test_accuracy.iter().enumerate() {
            out.push(plain(s.task, "test_accuracy", Some(t), a));
        }
        for (t, &a) in s.certification_accuracy.iter().enumerate() {
            out.push(plain(s.task, "certification_accuracy", Some(t), a));
        }
        for (t, c) in s.certificates.iter().enumerate() {
            let Some(c) = c else { continue };
            for (metric, value) in [("certified_bound", c.certified_bound), ("raw_bound", c.raw_bound), ("margin", c.margin)] {
                out.push(Row {
                    confidence_beta: Some(c.confidence_beta),
                    n: Some(c.n),
                    margin_method: Some(&c.margin_method),
                    asymptotic: Some(c.asymptotic),
                    ..plain(s.task, metric, Some(t), value)
                });
            }
        }
        if let Some(size) = s.lid_size {
            out.push(plain(s.task, "lid_size", None, size));
        }
        out.push(plain(s.task, "buffer_calls", None, s.buffer_calls as f64));
    }
    out
}

/// CSV text for several records, one row per (step, metric, task).
pub fn to_csv(records: &[&RunRecord]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let csv_err = |e: csv::Error| HarnessError::Serialize(e.to_string());
    w.write_record(CSV_COLUMNS).map_err(csv_err)?;
    for r in records {
        for row in rows(r) {
            w.serialize(row).map_err(csv_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Serialize(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| HarnessError::Serialize(e.to_string()))
}

fn write(path: PathBuf, text: &str) -> Result<PathBuf> {
    fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;
    Ok(path)
}

/// Writes `<stem>.json` and/or `<stem>.csv` into `dir`.
pub fn emit_report(records: &[&RunRecord], dir: &Path, stem: &str, format: ReportFormat) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut written = Vec::new();
    if matches!(format, ReportFormat::Json | ReportFormat::Both) {
        let text = if let [one] = records {
            one.to_json()?
        } else {
            serde_json::to_string_pretty(records).map_err(|e| HarnessError::Serialize(e.to_string()))?
        };
        written.push(write(dir.join(format!("{stem}.json")), &text)?);
    }
    if matches!(format, ReportFormat::Csv | ReportFormat::Both) {
        written.push(write(dir.join(format!("{stem}.csv")), &to_csv(records)?)?);
    }
    Ok(written)
}
