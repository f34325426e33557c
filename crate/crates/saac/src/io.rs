//! CSV files written by a run and read back by `compare`, `project-states`
//! and the tests. Floats use Rust's shortest round-trip formatting, so
//! every value, NaN included, parses back unchanged.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use saac_core::trainer::{MetricsRow, StateRecord};

pub const METRICS_HEADER: [&str; 7] = [
    "step",
    "eval_return_mean",
    "eval_return_std",
    "cum_failures",
    "alpha",
    "beta",
    "kl_estimate",
];

pub const METRICS_FILE: &str = "metrics.csv";
pub const STATES_FILE: &str = "states.csv";
pub const CONFIG_FILE: &str = "config.txt";

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file))
}

fn appender(path: &Path) -> Result<csv::Writer<File>> {
    let file = OpenOptions::new()
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    Ok(csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

fn metrics_record(row: &MetricsRow) -> [String; 7] {
    [
        row.step.to_string(),
        row.eval_return_mean.to_string(),
        row.eval_return_std.to_string(),
        row.cum_failures.to_string(),
        row.alpha.to_string(),
        row.beta.to_string(),
        row.kl_estimate.to_string(),
    ]
}

/// Creates `metrics.csv` holding only the header.
pub fn create_metrics(path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(METRICS_HEADER)?;
    w.flush()?;
    Ok(())
}

pub fn append_metrics(path: &Path, row: &MetricsRow) -> Result<()> {
    let mut w = appender(path)?;
    w.write_record(metrics_record(row))?;
    w.flush()?;
    Ok(())
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(METRICS_HEADER)?;
    for row in rows {
        w.write_record(metrics_record(row))?;
    }
    w.flush()?;
    Ok(())
}

fn field<T: std::str::FromStr>(record: &csv::StringRecord, i: usize, path: &Path) -> Result<T>
where
    T::Err: std::error::Error + Send + Sync + 'static,
{
    let text = record.get(i).with_context(|| format!("{}: short row", path.display()))?;
    text.parse()
        .with_context(|| format!("{}: bad value `{text}` in column {i}", path.display()))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header = reader.headers()?.clone();
    if header.iter().ne(METRICS_HEADER) {
        bail!("{}: unexpected header {:?}", path.display(), header);
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let r = record?;
        rows.push(MetricsRow {
            step: field(&r, 0, path)?,
            eval_return_mean: field(&r, 1, path)?,
            eval_return_std: field(&r, 2, path)?,
            cum_failures: field(&r, 3, path)?,
            alpha: field(&r, 4, path)?,
            beta: field(&r, 5, path)?,
            kl_estimate: field(&r, 6, path)?,
        });
    }
    Ok(rows)
}

fn states_header(dim: usize) -> Vec<String> {
    std::iter::once("step".to_string()).chain((0..dim).map(|i| format!("s{i}"))).collect()
}

fn state_record(s: &StateRecord) -> Vec<String> {
    std::iter::once(s.step.to_string())
        .chain(s.state.iter().map(|x| x.to_string()))
        .collect()
}

pub fn create_states(path: &Path, dim: usize) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(states_header(dim))?;
    w.flush()?;
    Ok(())
}

pub fn append_states(path: &Path, states: &[StateRecord]) -> Result<()> {
    let mut w = appender(path)?;
    for s in states {
        w.write_record(state_record(s))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_states(path: &Path, dim: usize, states: &[StateRecord]) -> Result<()> {
    create_states(path, dim)?;
    append_states(path, states)
}

pub fn read_states(path: &Path) -> Result<Vec<StateRecord>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let dim = reader.headers()?.len().saturating_sub(1);
    if reader.headers()?.get(0) != Some("step") {
        bail!("{}: first column must be `step`", path.display());
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let r = record?;
        let state = (1..=dim).map(|i| field(&r, i, path)).collect::<Result<_>>()?;
        out.push(StateRecord { step: field(&r, 0, path)?, state });
    }
    Ok(out)
}

/// One row of the `compare` summary.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub variant: String,
    pub efficiency: f64,
    pub failures_mean: f64,
    pub failures_std: f64,
    pub seeds: usize,
}

pub const SUMMARY_HEADER: [&str; 5] = ["variant", "efficiency", "failures_mean", "failures_std", "seeds"];

pub fn write_summary<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record([
            r.variant.clone(),
            r.efficiency.to_string(),
            r.failures_mean.to_string(),
            r.failures_std.to_string(),
            r.seeds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_file(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_summary(BufWriter::new(file), rows)
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    if reader.headers()?.iter().ne(SUMMARY_HEADER) {
        bail!("{}: unexpected header", path.display());
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let r = record?;
        rows.push(SummaryRow {
            variant: r.get(0).unwrap_or_default().to_string(),
            efficiency: field(&r, 1, path)?,
            failures_mean: field(&r, 2, path)?,
            failures_std: field(&r, 3, path)?,
            seeds: field(&r, 4, path)?,
        });
    }
    Ok(rows)
}

/// `step,stage,pc1,pc2` rows of a state projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedState {
    pub step: usize,
    pub stage: usize,
    pub pc1: f64,
    pub pc2: f64,
}

pub const PROJECTION_HEADER: [&str; 4] = ["step", "stage", "pc1", "pc2"];

pub fn write_projection(path: &Path, points: &[ProjectedState]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(PROJECTION_HEADER)?;
    for p in points {
        w.write_record([p.step.to_string(), p.stage.to_string(), p.pc1.to_string(), p.pc2.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_projection(path: &Path) -> Result<Vec<ProjectedState>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    if reader.headers()?.iter().ne(PROJECTION_HEADER) {
        bail!("{}: unexpected header", path.display());
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let r = record?;
        out.push(ProjectedState {
            step: field(&r, 0, path)?,
            stage: field(&r, 1, path)?,
            pc1: field(&r, 2, path)?,
            pc2: field(&r, 3, path)?,
        });
    }
    Ok(out)
}
