//! `matrosov run <scenario>` / `matrosov list`.

mod catalog;
mod pipeline;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::scenario::Scenario;

/// Exit code for usage and parse errors.
const USAGE_ERROR: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "matrosov", version, about = "Run Matrosov-type stability scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario file, or a bundled scenario by name.
    Run {
        scenario: String,
        /// Artifact directory (default: `matrosov-out/<name>`).
        #[arg(long, env = "MATROSOV_OUT")]
        out: Option<PathBuf>,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the integration step.
        #[arg(long)]
        dt: Option<f64>,
        /// Override the simulation horizon.
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// List scenarios with their one-line descriptions.
    List {
        /// Read scenarios from this directory instead of the bundled catalog.
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
}

fn resolve(name: &str) -> Result<Scenario, scenario::ScenarioError> {
    let path = PathBuf::from(name);
    if path.exists() {
        return Scenario::load(&path);
    }
    match catalog::bundled(name) {
        Some(text) => Scenario::parse(text, name),
        None => Scenario::load(&path),
    }
}

fn run(scenario: String, out: Option<PathBuf>, seed: Option<u64>, dt: Option<f64>, horizon: Option<f64>) -> ExitCode {
    let mut sc = match resolve(&scenario) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(USAGE_ERROR);
        }
    };
    if let Some(seed) = seed {
        sc.seed = seed;
    }
    if let Some(dt) = dt {
        sc.grid.dt = dt;
    }
    if let Some(h) = horizon {
        sc.grid.horizon = h;
    }
    if let Err(e) = sc.validate() {
        eprintln!("error: {scenario}: {e}");
        return ExitCode::from(USAGE_ERROR);
    }
    let out = out.unwrap_or_else(|| PathBuf::from("matrosov-out").join(&sc.name));
    match pipeline::run_scenario(&sc, &out) {
        Ok(summary) => {
            for stage in pipeline::STAGES {
                if let Some(verdict) = summary.verdicts.get(stage) {
                    println!("{stage:<12} {verdict}");
                }
            }
            println!("artifacts in {}", out.display());
            ExitCode::from(summary.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: writing artifacts to {}: {e}", out.display());
            ExitCode::FAILURE
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { USAGE_ERROR } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Run {
            scenario,
            out,
            seed,
            dt,
            horizon,
        } => run(scenario, out, seed, dt, horizon),
        Command::List { catalog: dir } => match catalog::list(dir.as_deref()) {
            Ok(entries) => {
                for (name, description) in entries {
                    println!("{name:<20} {description}");
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(USAGE_ERROR)
            }
        },
    }
}
