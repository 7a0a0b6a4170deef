//! Tables, threshold checks and their on-disk form.

use std::fmt::Display;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::json;

use crate::plot;

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub plot: Option<PlotSpec>,
}

/// Which columns of a table to draw: one series per distinct `series` value.
#[derive(Clone, Debug, PartialEq)]
pub struct PlotSpec {
    pub x: String,
    pub y: String,
    pub series: Vec<String>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Table {
            name: name.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: vec![],
            plot: None,
        }
    }

    pub fn with_plot(mut self, x: &str, y: &str, series: &[&str]) -> Self {
        self.plot = Some(PlotSpec {
            x: x.into(),
            y: y.into(),
            series: series.iter().map(|s| s.to_string()).collect(),
        });
        self
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn to_csv(&self, checksum: &str) -> String {
        let mut out = format!("# config_sha256={checksum}\n{}\n", self.header.join(","));
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// CSV cell for any displayable value; fields with commas are quoted.
pub fn cell(x: impl Display) -> String {
    let s = x.to_string();
    if s.contains(',') || s.contains('"') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s
    }
}

/// CSV cell for a float, `-inf` spelled out.
pub fn num(x: f64) -> String {
    if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{x}")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: String,
    pub passed: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, max: f64) -> Self {
        Check { name: name.into(), value, threshold: format!("<= {max}"), passed: value <= max }
    }

    pub fn below(name: impl Into<String>, value: f64, max: f64) -> Self {
        Check { name: name.into(), value, threshold: format!("< {max}"), passed: value < max }
    }

    pub fn at_least(name: impl Into<String>, value: f64, min: f64) -> Self {
        Check { name: name.into(), value, threshold: format!(">= {min}"), passed: value >= min }
    }

    pub fn equals(name: impl Into<String>, value: f64, target: f64) -> Self {
        Check { name: name.into(), value, threshold: format!("== {target}"), passed: value == target }
    }

    pub fn near(name: impl Into<String>, value: f64, target: f64, tol: f64) -> Self {
        Check {
            name: name.into(),
            value,
            threshold: format!("{target} ± {tol}"),
            passed: (value - target).abs() <= tol,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Outcome {
    pub tables: Vec<Table>,
    pub checks: Vec<Check>,
    /// Experiment-specific extras for the summary.
    pub details: serde_json::Value,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Writes `<table>.csv` files, optional `<table>.svg` plots and
    /// `summary.json`; returns the written paths.
    pub fn write(&self, dir: &Path, experiment: &str, checksum: &str, plots: bool) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let mut written = vec![];
        for t in &self.tables {
            let path = dir.join(format!("{}.csv", t.name));
            std::fs::write(&path, t.to_csv(checksum)).with_context(|| format!("cannot write {}", path.display()))?;
            written.push(path);
            if plots {
                if let Some(svg) = plot::table_plot(t) {
                    let path = dir.join(format!("{}.svg", t.name));
                    std::fs::write(&path, svg).with_context(|| format!("cannot write {}", path.display()))?;
                    written.push(path);
                }
            }
        }
        let summary = json!({
            "experiment": experiment,
            "config_sha256": checksum,
            "passed": self.passed(),
            "checks": self.checks,
            "tables": self.tables.iter().map(|t| format!("{}.csv", t.name)).collect::<Vec<_>>(),
            "details": self.details,
        });
        let path = dir.join("summary.json");
        std::fs::write(&path, serde_json::to_string_pretty(&summary)? + "\n")?;
        written.push(path);
        Ok(written)
    }
}
