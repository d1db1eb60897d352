//! Report assembly: CSV artifacts, the list of checks exercised, and the
//! JSON manifest. Only the manifest carries a timestamp, so CSV bodies are
//! byte-identical across reruns.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use stocycle::report::CsvTable;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    /// `"<"`, `"<="` or `">="`: how `value` is compared with `threshold`.
    pub relation: &'static str,
    pub pass: bool,
}

#[derive(Debug, Default)]
pub struct Report {
    pub checks: Vec<Check>,
    pub tolerances: BTreeMap<String, f64>,
    pub tables: Vec<(String, String)>,
    pub summary: BTreeMap<String, serde_json::Value>,
}

impl Report {
    pub fn below(&mut self, name: &str, value: f64, threshold: f64) {
        self.push(name, value, threshold, "<", value < threshold);
    }

    pub fn at_most(&mut self, name: &str, value: f64, threshold: f64) {
        self.push(name, value, threshold, "<=", value <= threshold);
    }

    pub fn at_least(&mut self, name: &str, value: f64, threshold: f64) {
        self.push(name, value, threshold, ">=", value >= threshold);
    }

    fn push(&mut self, name: &str, value: f64, threshold: f64, relation: &'static str, pass: bool) {
        self.tolerances.insert(name.to_string(), threshold);
        self.checks.push(Check {
            name: name.to_string(),
            value,
            threshold,
            relation,
            pass,
        });
    }

    pub fn tolerance(&mut self, name: &str, value: f64) {
        self.tolerances.insert(name.to_string(), value);
    }

    pub fn table(&mut self, file: &str, table: &CsvTable) {
        self.tables.push((file.to_string(), table.to_csv()));
    }

    pub fn note(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.summary.insert(key.to_string(), v);
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub analysis: &'a str,
    pub timestamp_unix: u64,
    pub seed: u64,
    pub workers: Option<usize>,
    pub config: serde_json::Value,
    pub tolerances: &'a BTreeMap<String, f64>,
    pub checks: &'a [Check],
    pub summary: &'a BTreeMap<String, serde_json::Value>,
    pub artifacts: Vec<&'a str>,
    pub passed: bool,
}

/// Write every table and the manifest into `dir`, returning the manifest
/// path and its JSON text.
pub fn write_report(
    dir: &Path,
    analysis: &str,
    seed: u64,
    workers: Option<usize>,
    config: &impl Serialize,
    report: &Report,
) -> Result<(PathBuf, String), CliError> {
    fs::create_dir_all(dir)?;
    for (file, body) in &report.tables {
        fs::write(dir.join(file), body)?;
    }
    let timestamp_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        analysis,
        timestamp_unix,
        seed,
        workers,
        config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
        tolerances: &report.tolerances,
        checks: &report.checks,
        summary: &report.summary,
        artifacts: report.tables.iter().map(|(f, _)| f.as_str()).collect(),
        passed: report.passed(),
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::Io(std::io::Error::other(e)))?;
    let path = dir.join("manifest.json");
    fs::write(&path, &json)?;
    Ok((path, json))
}
