//! CSV tables and the run manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::harness::EnsembleSummary;

/// Header plus rows of already-formatted cells.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

/// Full-precision float cell; round-trips through `str::parse`.
pub fn cell(x: f64) -> String {
    format!("{x:?}")
}

/// `epsilon, time, functional_id, mean, variance, count, stderr` for each
/// summary; the limit ensemble is labelled `limit`.
pub fn functional_table(labels: &[String], summaries: &[&EnsembleSummary]) -> Table {
    let mut t = Table::new(&["epsilon", "time", "functional_id", "mean", "variance", "count", "stderr"]);
    for s in summaries {
        let eps = s.epsilon.map_or_else(|| "limit".to_string(), cell);
        for ts in &s.times {
            for (label, st) in labels.iter().zip(&ts.functionals) {
                t.push(vec![
                    eps.clone(),
                    cell(ts.time),
                    label.clone(),
                    cell(st.mean()),
                    cell(st.variance()),
                    st.count().to_string(),
                    cell(st.stderr()),
                ]);
            }
        }
    }
    t
}

pub fn moment_table(summaries: &[EnsembleSummary]) -> Table {
    let mut t = Table::new(&["epsilon", "time", "mean_norm2", "stderr_norm2", "mean_norm4", "stderr_norm4"]);
    for s in summaries {
        for ts in &s.times {
            t.push(vec![
                s.epsilon.map_or_else(|| "limit".into(), cell),
                cell(ts.time),
                cell(ts.norm2.mean()),
                cell(ts.norm2.stderr()),
                cell(ts.norm4.mean()),
                cell(ts.norm4.stderr()),
            ]);
        }
    }
    t
}

#[derive(Clone, Debug, Serialize)]
pub struct FailureCount {
    pub ensemble: String,
    pub completed: usize,
    pub failed: usize,
    pub gronwall_violations: usize,
}

impl FailureCount {
    pub fn of(s: &EnsembleSummary) -> Self {
        Self {
            ensemble: s.epsilon.map_or_else(|| "limit".into(), |e| format!("epsilon={e}")),
            completed: s.completed,
            failed: s.failed,
            gronwall_violations: s.gronwall_violations,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub package: String,
    pub version: String,
    pub seed: u64,
    pub workers: usize,
    pub config: ExperimentConfig,
    pub failures: Vec<FailureCount>,
    pub outputs: Vec<String>,
    pub checks: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str, config: &ExperimentConfig, workers: usize) -> Self {
        Self {
            command: command.into(),
            package: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: config.seed,
            workers,
            config: config.clone(),
            failures: Vec::new(),
            outputs: Vec::new(),
            checks: serde_json::Value::Null,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }
}
