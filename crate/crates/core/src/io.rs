//! Result files: convergence traces (CSV) and barycenter results (JSON).
//!
//! Every file carries the content hash of the instance it was computed on.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bregman::{BaselineRecord, BaselineResult};
use crate::dual::solver::{HyperParams, RoundRecord, SolveResult};
use crate::measures::ProblemInstance;

/// Prefix of the provenance comment that ends every trace file.
pub const HASH_COMMENT: &str = "# instance_hash=";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Format(String),
}

/// One row of a dual-method trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: u64,
    pub dual_value: Option<f64>,
    pub support_size: usize,
    pub step_size: f64,
    pub theta0: f64,
    pub wall_ms: f64,
}

impl From<&RoundRecord> for TraceRow {
    fn from(r: &RoundRecord) -> Self {
        Self {
            iter: r.iter,
            dual_value: r.dual_value,
            support_size: r.support_size,
            step_size: r.step_size,
            theta0: r.theta0,
            wall_ms: r.wall_ms,
        }
    }
}

fn write_rows<W: Write, T: Serialize>(mut out: W, rows: &[T], hash: &str) -> Result<(), IoError> {
    {
        let mut w = csv::Writer::from_writer(&mut out);
        for row in rows {
            w.serialize(row)?;
        }
        w.flush()?;
    }
    writeln!(out, "{HASH_COMMENT}{hash}")?;
    Ok(())
}

/// Writes `iter,dual_value,support_size,step_size,theta0,wall_ms` rows;
/// `dual_value` is empty on rounds without a full evaluation.
pub fn write_trace<W: Write>(out: W, history: &[RoundRecord], hash: &str) -> Result<(), IoError> {
    let rows: Vec<TraceRow> = history.iter().map(TraceRow::from).collect();
    if rows.is_empty() {
        let mut out = out;
        writeln!(out, "iter,dual_value,support_size,step_size,theta0,wall_ms")?;
        writeln!(out, "{HASH_COMMENT}{hash}")?;
        return Ok(());
    }
    write_rows(out, &rows, hash)
}

/// Baseline trace with columns
/// `iter,support_change,sinkhorn_iterations,sinkhorn_converged,reseeded,wall_ms`.
pub fn write_baseline_trace<W: Write>(out: W, trace: &[BaselineRecord], hash: &str) -> Result<(), IoError> {
    write_rows(out, trace, hash)
}

fn read_rows<R: Read, T: for<'de> Deserialize<'de>>(input: R) -> Result<(Vec<T>, Option<String>), IoError> {
    let mut text = String::new();
    BufReader::new(input).read_to_string(&mut text)?;
    let hash = text
        .lines()
        .rev()
        .find_map(|l| l.strip_prefix(HASH_COMMENT))
        .map(|h| h.trim().to_owned());
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let rows = reader.deserialize().collect::<Result<Vec<T>, _>>()?;
    Ok((rows, hash))
}

/// Rows and instance hash of a dual-method trace.
pub fn read_trace<R: Read>(input: R) -> Result<(Vec<TraceRow>, Option<String>), IoError> {
    read_rows(input)
}

pub fn read_baseline_trace<R: Read>(input: R) -> Result<(Vec<BaselineRecord>, Option<String>), IoError> {
    read_rows(input)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dual,
    Bregman,
}

/// Result file shared by both methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarycenterFile {
    pub support: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_bar: Option<Vec<f64>>,
    /// Exact-oracle objective of the uniform measure on `support`.
    pub objective: f64,
    pub method: Method,
    pub instance_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_dual: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regularization: Option<f64>,
    pub converged: bool,
    pub iterations: u64,
    pub total_time_s: f64,
    pub time_per_iter_ms: f64,
    pub config: serde_json::Value,
}

impl BarycenterFile {
    pub fn from_dual(instance: &ProblemInstance, hyper: &HyperParams, result: &SolveResult) -> Self {
        let support = instance
            .candidates()
            .points()
            .select(&result.recovery.support)
            .expect("recovered indices are in range")
            .to_rows();
        Self {
            support,
            gamma_bar: Some(result.recovery.gamma_bar.clone()),
            objective: result.recovery.objective,
            method: Method::Dual,
            instance_hash: instance.content_hash(),
            selected: Some(result.recovery.support.clone()),
            best_dual: Some(result.best_dual),
            regularization: None,
            converged: result.converged,
            iterations: result.iterations,
            total_time_s: result.total_ms / 1e3,
            time_per_iter_ms: result.mean_round_ms(),
            config: serde_json::to_value(hyper).expect("hyperparameters serialize"),
        }
    }

    pub fn from_baseline(instance: &ProblemInstance, result: &BaselineResult) -> Self {
        Self {
            support: result.support.to_rows(),
            gamma_bar: None,
            objective: result.objective,
            method: Method::Bregman,
            instance_hash: instance.content_hash(),
            selected: None,
            best_dual: None,
            regularization: Some(result.config.sinkhorn.reg),
            converged: result.converged,
            iterations: result.iterations as u64,
            total_time_s: result.total_ms / 1e3,
            time_per_iter_ms: result.mean_iter_ms(),
            config: serde_json::to_value(result.config).expect("config serializes"),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut out, self)?;
        writeln!(out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }
}

/// Writes points as CSV rows `x0,x1,...` with an optional leading column.
pub fn write_points<W: Write>(out: W, label: Option<(&str, &[String])>, rows: &[Vec<f64>]) -> Result<(), IoError> {
    let dim = rows.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = Vec::new();
    if let Some((name, _)) = label {
        header.push(name.to_owned());
    }
    header.extend((0..dim).map(|d| format!("x{d}")));
    w.write_record(&header)?;
    for (i, row) in rows.iter().enumerate() {
        let mut rec: Vec<String> = Vec::with_capacity(dim + 1);
        if let Some((_, labels)) = label {
            rec.push(labels[i].clone());
        }
        rec.extend(row.iter().map(|x| x.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_trace(path: &Path, history: &[RoundRecord], hash: &str) -> Result<(), IoError> {
    write_trace(BufWriter::new(File::create(path)?), history, hash)
}

pub fn load_trace(path: &Path) -> Result<(Vec<TraceRow>, Option<String>), IoError> {
    read_trace(File::open(path)?)
}

/// Reads the hash comment of any trace file without parsing rows.
pub fn trace_hash(path: &Path) -> Result<Option<String>, IoError> {
    let reader = BufReader::new(File::open(path)?);
    let mut found = None;
    for line in reader.lines() {
        if let Some(h) = line?.strip_prefix(HASH_COMMENT) {
            found = Some(h.trim().to_owned());
        }
    }
    Ok(found)
}
