//! File-level front end: run artifacts, sweeps and config validation.
//!
//! A run directory holds `metrics.jsonl` (one [`MetricsRecord`] per line),
//! `summary.csv` (one row) and `manifest.json` (resolved config, artifact
//! list, wall-clock time, tool version). A sweep directory holds one run
//! directory per value plus `sweep_summary.csv`.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{json_error, FederationConfig};
use crate::engine::{self, MetricsRecord, RunLog, RunOptions};
use crate::error::{Error, Result};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SWEEP_SUMMARY_FILE: &str = "sweep_summary.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub run_id: String,
    pub mode: String,
    pub final_accuracy: Option<f64>,
    pub final_loss: f64,
    pub uplink_bytes: u64,
    pub downlink_bytes: u64,
    pub sim_time_s: f64,
    pub rounds_or_events: usize,
    pub final_mse: Option<f64>,
    pub server_events_per_s: f64,
}

/// One line of `sweep_summary.csv`: the swept key and value, then the run's
/// summary columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub key: String,
    pub value: String,
    pub run_id: String,
    pub mode: String,
    pub final_accuracy: Option<f64>,
    pub final_loss: f64,
    pub uplink_bytes: u64,
    pub downlink_bytes: u64,
    pub sim_time_s: f64,
    pub rounds_or_events: usize,
    pub final_mse: Option<f64>,
    pub server_events_per_s: f64,
}

impl SweepRow {
    fn new(key: &str, value: String, s: SummaryRow) -> Self {
        SweepRow {
            key: key.to_string(),
            value,
            run_id: s.run_id,
            mode: s.mode,
            final_accuracy: s.final_accuracy,
            final_loss: s.final_loss,
            uplink_bytes: s.uplink_bytes,
            downlink_bytes: s.downlink_bytes,
            sim_time_s: s.sim_time_s,
            rounds_or_events: s.rounds_or_events,
            final_mse: s.final_mse,
            server_events_per_s: s.server_events_per_s,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config: Value,
    pub artifacts: Vec<String>,
    pub wall_clock_s: f64,
    pub tool_version: String,
    pub stalled: bool,
}

impl SummaryRow {
    pub fn from_log(run_id: &str, log: &RunLog) -> Self {
        let last = log.last();
        SummaryRow {
            run_id: run_id.to_string(),
            mode: log.mode.as_str().to_string(),
            final_accuracy: last.and_then(|r| r.accuracy),
            final_loss: last.map_or(f64::NAN, |r| r.eval_loss),
            uplink_bytes: last.map_or(0, |r| r.uplink_bytes),
            downlink_bytes: last.map_or(0, |r| r.downlink_bytes),
            sim_time_s: log.sim_time(),
            rounds_or_events: log.records.len(),
            final_mse: last.and_then(|r| r.mse),
            server_events_per_s: log.server_load(),
        }
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Csv {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

/// Writes the three run artifacts into `dir`.
pub fn write_run(dir: &Path, run_id: &str, cfg: &FederationConfig, log: &RunLog, wall_clock_s: f64) -> Result<SummaryRow> {
    fs::create_dir_all(dir)?;
    let mut metrics = BufWriter::new(File::create(dir.join(METRICS_FILE))?);
    for r in &log.records {
        serde_json::to_writer(&mut metrics, r)?;
        metrics.write_all(b"\n")?;
    }
    metrics.flush()?;
    let summary = SummaryRow::from_log(run_id, log);
    write_csv(&dir.join(SUMMARY_FILE), std::slice::from_ref(&summary))?;
    let manifest = Manifest {
        config: cfg.resolved(),
        artifacts: vec![METRICS_FILE.into(), SUMMARY_FILE.into(), MANIFEST_FILE.into()],
        wall_clock_s,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        stalled: log.stalled,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(summary)
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub fn read_summary(path: impl AsRef<Path>) -> Result<Vec<SummaryRow>> {
    read_csv(path.as_ref())
}

pub fn read_sweep_summary(path: impl AsRef<Path>) -> Result<Vec<SweepRow>> {
    read_csv(path.as_ref())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Runs `cfg` and writes its artifacts. Stalled runs still leave their
/// partial log on disk before the error is returned.
pub fn run_to_dir(cfg: &FederationConfig, out: &Path, opts: RunOptions) -> Result<RunLog> {
    let start = Instant::now();
    let log = engine::execute(cfg, opts)?;
    write_run(out, "run", cfg, &log, start.elapsed().as_secs_f64())?;
    log.into_result()
}

pub fn run_command(config: &Path, out: &Path, opts: RunOptions) -> Result<RunLog> {
    let cfg = FederationConfig::load(config)?;
    run_to_dir(&cfg, out, opts)
}

/// Parsed and validated config, with every default filled in.
pub fn validate_command(config: &Path) -> Result<Value> {
    Ok(FederationConfig::load(config)?.resolved())
}

/// Replaces the value at a dotted path; the path must already exist in the
/// resolved config.
pub fn set_dotted(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::config(key, "path runs through a non-object value"))?;
        let slot = obj
            .get_mut(*part)
            .ok_or_else(|| Error::config(key, format!("unknown key `{part}`")))?;
        if i + 1 == parts.len() {
            *slot = value;
            return Ok(());
        }
        cur = slot;
    }
    Err(Error::config(key, "empty key"))
}

/// A sweep value given on the command line: JSON if it parses, else a string.
pub fn parse_value(text: &str) -> Value {
    serde_json::from_str(text.trim()).unwrap_or_else(|_| Value::String(text.trim().to_string()))
}

fn label(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// One run per value of `key`, each in its own subdirectory of `out`.
pub fn sweep(cfg: &FederationConfig, key: &str, values: &[Value], out: &Path, opts: RunOptions) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::config(key, "sweep needs at least one value"));
    }
    // resolve every variant before running anything
    let variants = values
        .iter()
        .map(|v| {
            let mut resolved = cfg.resolved();
            set_dotted(&mut resolved, key, v.clone())?;
            let variant: FederationConfig = serde_json::from_value(resolved).map_err(json_error)?;
            variant.validate()?;
            Ok(variant)
        })
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(out)?;
    let mut rows = Vec::with_capacity(values.len());
    for (i, (value, variant)) in values.iter().zip(&variants).enumerate() {
        let id = format!("{i:03}_{}", sanitize(&format!("{key}={}", label(value))));
        let dir: PathBuf = out.join(&id);
        let start = Instant::now();
        let log = engine::execute(variant, opts)?;
        let summary = write_run(&dir, &id, variant, &log, start.elapsed().as_secs_f64())?;
        rows.push(SweepRow::new(key, label(value), summary));
    }
    write_csv(&out.join(SWEEP_SUMMARY_FILE), &rows)?;
    Ok(rows)
}

pub fn sweep_command(config: &Path, key: &str, values: &[String], out: &Path, opts: RunOptions) -> Result<Vec<SweepRow>> {
    let cfg = FederationConfig::load(config)?;
    let values: Vec<Value> = values.iter().map(|v| parse_value(v)).collect();
    sweep(&cfg, key, &values, out, opts)
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._=-".contains(c) { c } else { '_' })
        .collect()
}

/// 1 for configuration problems, 2 for failures while running.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::Json(_) => 1,
        _ => 2,
    }
}
