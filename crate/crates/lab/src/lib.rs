//! Reproducible experiment harness: JSON configs in, CSV tables, a JSON
//! summary and optional SVG plots out.

pub mod config;
pub mod experiments;
pub mod output;
pub mod plot;

use std::path::{Path, PathBuf};

use anyhow::Result;
use serde_json::json;

pub use config::ExperimentConfig;
pub use output::Outcome;

/// Runs `config` and writes its artifacts under `dir`.
pub fn run_to_dir(config: &ExperimentConfig, dir: &Path, plots: bool) -> Result<(Outcome, Vec<PathBuf>)> {
    let outcome = experiments::run(config)?;
    let written = outcome.write(dir, config.experiment.id(), &config.checksum(), plots)?;
    Ok((outcome, written))
}

/// Machine-readable description of a failed run.
pub fn diagnostic(err: &anyhow::Error) -> serde_json::Value {
    let kind = match err.chain().find_map(|e| e.downcast_ref::<sofic_core::Error>()) {
        Some(sofic_core::Error::Budget { what, required, budget }) => {
            return json!({
                "error": "budget",
                "message": format!("{err:#}"),
                "what": what,
                "required": required.to_string(),
                "budget": budget.to_string(),
            })
        }
        Some(sofic_core::Error::Structural(_)) => "structural",
        Some(sofic_core::Error::Validation(_)) => "validation",
        Some(sofic_core::Error::Refused(_)) => "refused",
        None => "config",
    };
    json!({ "error": kind, "message": format!("{err:#}") })
}
