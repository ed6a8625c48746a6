use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CliError, Result};

/// CSV table with string cells; floats are written in shortest round-trip form.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.into_inner().map_err(|e| CliError::Io(e.into_error()))
    }
}

/// What an experiment produced: an optional CSV table and a JSON summary.
/// With a table the summary goes to a `.json` sidecar next to it.
#[derive(Debug, Clone)]
pub struct Report {
    pub table: Option<Table>,
    pub summary: serde_json::Value,
    /// Set when a checked property failed; outputs are still written.
    pub violation: Option<String>,
}

pub fn to_json<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(v)?)
}

pub fn sidecar_path(out: &Path) -> PathBuf {
    out.with_extension("json")
}

fn pretty(v: &serde_json::Value) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(v)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Writes the report to `out`, or to stdout when no path is given.
pub fn write_report(report: &Report, out: Option<&Path>) -> Result<()> {
    let main = match &report.table {
        Some(t) => t.to_bytes()?,
        None => pretty(&report.summary)?,
    };
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(path, main)?;
            if report.table.is_some() {
                std::fs::write(sidecar_path(path), pretty(&report.summary)?)?;
            }
        }
        None => std::io::stdout().lock().write_all(&main)?,
    }
    Ok(())
}

/// Runs `f(0..n)` on a pool of `workers` threads (all cores when `None`) and
/// returns results in index order. The first failing index wins, whatever
/// the execution order.
pub fn par_map<T, F>(workers: Option<usize>, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
    let results: Vec<Result<T>> = pool.install(|| (0..n).into_par_iter().map(&f).collect());
    results.into_iter().collect()
}

pub fn fmt(x: f64) -> String {
    x.to_string()
}
