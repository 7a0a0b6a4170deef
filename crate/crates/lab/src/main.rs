use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use sofic_lab::{diagnostic, run_to_dir, ExperimentConfig};

#[derive(Parser)]
#[command(name = "sofic-lab", version, about = "Run sofic entropy experiments from JSON configs")]
struct Cli {
    /// Worker threads; 1 runs everything sequentially.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its tables.
    Run {
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config budget.
        #[arg(long)]
        budget: Option<u64>,
        /// Output directory; defaults to the config's, then `results/<id>`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also emit SVG plots.
        #[arg(long)]
        plot: bool,
    },
    /// Check a config against the schema and semantic rules.
    Validate { config: PathBuf },
    /// Summarize a results directory written by `run`.
    Report { dir: PathBuf },
}

fn load(path: &Path, seed: Option<u64>, budget: Option<u64>) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(b) = budget {
        config.budget = b;
    }
    config.validate()?;
    Ok(config)
}

fn report(dir: &Path) -> Result<bool> {
    let path = dir.join("summary.json");
    let text = std::fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
    let summary: serde_json::Value = serde_json::from_str(&text)?;
    let passed = summary["passed"].as_bool().context("summary lacks `passed`")?;
    println!("{} config_sha256={}", summary["experiment"].as_str().unwrap_or("?"), summary["config_sha256"].as_str().unwrap_or("?"));
    for c in summary["checks"].as_array().into_iter().flatten() {
        let mark = if c["passed"].as_bool() == Some(true) { "PASS" } else { "FAIL" };
        println!("  {mark} {}: {} ({})", c["name"].as_str().unwrap_or(""), c["value"], c["threshold"].as_str().unwrap_or(""));
    }
    for t in summary["tables"].as_array().into_iter().flatten() {
        println!("  table {}", t.as_str().unwrap_or(""));
    }
    Ok(passed)
}

fn execute(cli: Cli) -> Result<bool> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().context("cannot configure the thread pool")?;
    }
    match cli.command {
        Command::Run { config, seed, budget, out, plot } => {
            let config = load(&config, seed, budget)?;
            let dir = out
                .or_else(|| config.output_dir.as_ref().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("results").join(config.experiment.id().to_lowercase()));
            let (outcome, written) = run_to_dir(&config, &dir, plot)?;
            for c in &outcome.checks {
                println!("{} {}: {} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.threshold);
            }
            for p in written {
                println!("wrote {}", p.display());
            }
            Ok(outcome.passed())
        }
        Command::Validate { config } => {
            let config = load(&config, None, None)?;
            println!("{} ok config_sha256={}", config.experiment.id(), config.checksum());
            Ok(true)
        }
        Command::Report { dir } => report(&dir),
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("{}", diagnostic(&e));
            ExitCode::from(1)
        }
    }
}
