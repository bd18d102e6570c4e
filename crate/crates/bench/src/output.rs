//! Result rows, CSV/JSON writers and summary statistics.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::BenchError;

/// Column order of every result CSV.
pub const CSV_HEADER: &str =
    "experiment,scheme,run,iteration,total_samples,psi_hat,ess_hat,j_hat,adapt_ns,generate_ns,reweight_ns";

/// One iteration of one run. Undefined `ess_hat` / `j_hat` are written as NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub scheme: String,
    pub run: usize,
    pub iteration: usize,
    pub total_samples: usize,
    pub psi_hat: f64,
    pub ess_hat: f64,
    pub j_hat: f64,
    pub adapt_ns: u64,
    pub generate_ns: u64,
    pub reweight_ns: u64,
}

pub fn write_csv<W: Write>(writer: W, rows: &[ResultRow]) -> Result<(), BenchError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(CSV_HEADER.split(','))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(path: &Path, rows: &[ResultRow]) -> Result<(), BenchError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    write_csv(File::create(path)?, rows)
}

pub fn read_csv(path: &Path) -> Result<Vec<ResultRow>, BenchError> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header.join(",") != CSV_HEADER {
        return Err(BenchError::Config(format!(
            "{} does not have the result header",
            path.display()
        )));
    }
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), BenchError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    Ok(())
}

/// Per-scheme summary of an ESS experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeSummary {
    /// Least-squares slope of mean ESS against total samples over the late
    /// window.
    pub slope: f64,
    pub final_ess_mean: f64,
    pub final_ess_stderr: f64,
}

pub type Summary = BTreeMap<String, SchemeSummary>;

/// Mean over runs of `ess_hat` at each iteration: `(total_samples, mean)`.
/// Runs must share one schedule.
pub fn mean_ess_curve(rows: &[ResultRow], scheme: &str) -> Vec<(f64, f64)> {
    let mut by_iter: BTreeMap<usize, (usize, f64, usize)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.scheme == scheme) {
        let e = by_iter.entry(r.iteration).or_insert((r.total_samples, 0.0, 0));
        e.1 += r.ess_hat;
        e.2 += 1;
    }
    by_iter
        .values()
        .map(|(n, sum, count)| (*n as f64, sum / *count as f64))
        .collect()
}

/// Least-squares slope of `y` on `x`.
pub fn fit_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    if points.len() < 2 {
        return f64::NAN;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Slope over the final half of the iterations of the mean curve.
pub fn late_window_slope(curve: &[(f64, f64)]) -> f64 {
    fit_slope(&curve[curve.len() / 2..])
}

/// Mean and standard error.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Final-iteration values of `field` per run, in run order.
pub fn final_values<F: Fn(&ResultRow) -> f64>(rows: &[ResultRow], scheme: &str, field: F) -> Vec<f64> {
    let mut last: BTreeMap<usize, &ResultRow> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.scheme == scheme) {
        let e = last.entry(r.run).or_insert(r);
        if r.iteration > e.iteration {
            *e = r;
        }
    }
    last.values().map(|r| field(r)).collect()
}

pub fn summarize(rows: &[ResultRow], scheme: &str) -> SchemeSummary {
    let curve = mean_ess_curve(rows, scheme);
    let (final_ess_mean, final_ess_stderr) = mean_stderr(&final_values(rows, scheme, |r| r.ess_hat));
    SchemeSummary {
        slope: late_window_slope(&curve),
        final_ess_mean,
        final_ess_stderr,
    }
}
