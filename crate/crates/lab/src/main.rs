use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use crate::config::{ConfigError, ExperimentConfig};
use crate::plot::{PlotKind, SchemaError};
use crate::run::Divergence;

mod config;
mod plot;
mod run;
mod verify;

#[derive(Parser)]
#[command(name = "rocgan-lab", version, about = "Run robust conditional GAN experiments from JSON configs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of an experiment config.
    Run { config: PathBuf },
    /// Render a CSV of metrics as an SVG plot.
    Plot {
        csv: PathBuf,
        #[arg(long, value_enum)]
        kind: PlotKind,
        #[arg(short = 'o', long = "output")]
        output: PathBuf,
    },
    /// Run the built-in self-checks.
    Verify {
        /// Include the training checks (tens of minutes).
        #[arg(long)]
        full: bool,
    },
}

fn run_config(path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let cfg = ExperimentConfig::parse(&text, base)?;
    let rows = run::run(&cfg)?;
    println!("{} rows written to {}", rows.len(), cfg.output_dir.join("metrics.csv").display());
    Ok(())
}

fn verify(full: bool) -> Result<bool> {
    let checks = verify::run(full)?;
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(checks.iter().all(|c| c.passed))
}

/// Maps an error to its exit code and machine-readable record.
fn report(e: &anyhow::Error) -> (u8, serde_json::Value) {
    if let Some(c) = e.downcast_ref::<ConfigError>() {
        return (2, json!({"error": c.message, "field": c.field}));
    }
    if let Some(s) = e.downcast_ref::<SchemaError>() {
        return (2, json!({"error": s.to_string(), "field": "csv"}));
    }
    if let Some(d) = e.downcast_ref::<Divergence>() {
        return (3, json!({"error": d.message, "seed": d.seed}));
    }
    (1, json!({"error": format!("{e:#}")}))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config } => run_config(&config).map(|()| true),
        Command::Plot { csv, kind, output } => plot::plot(&csv, kind, &output).map(|()| true),
        Command::Verify { full } => verify(full),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            let (code, record) = report(&e);
            eprintln!("{record}");
            ExitCode::from(code)
        }
    }
}
