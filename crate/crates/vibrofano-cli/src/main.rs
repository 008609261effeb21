//! `vibrofano`: run a scenario and write its CSV artifacts plus a manifest,
//! or validate a configuration.
//!
//! Exit codes: 0 success, 1 I/O or usage, 2 invalid configuration,
//! 3 calibration failure, 4 numerical instability.

mod cache;
mod output;
mod scenario;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use scenario::Scenario;

/// Environment variable naming the default spectrum cache directory.
const CACHE_ENV: &str = "VIBROFANO_CACHE";

#[derive(Parser)]
#[command(name = "vibrofano", version, about = "Exciton transport past a vibrating control unit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario.
    Run {
        scenario: Scenario,
        /// TOML file layered over the scenario's preset.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Dotted override, e.g. `model.vibration.freq=5`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Spectrum cache directory.
        #[arg(long, env = CACHE_ENV)]
        cache_dir: Option<PathBuf>,
    },
    /// Check a configuration and print every problem with its key path.
    Validate {
        config: PathBuf,
        /// Scenario whose defaults the file is layered over.
        #[arg(long, default_value = "custom")]
        scenario: Scenario,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
}

#[derive(Debug)]
pub enum CliError {
    Lib(vibrofano::Error),
    Validation(Vec<(String, String)>),
    Io(String),
    Usage(String),
}

impl From<vibrofano::Error> for CliError {
    fn from(e: vibrofano::Error) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use vibrofano::Error as E;
        match self {
            CliError::Io(_) | CliError::Usage(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Lib(E::Calibration(_)) => 3,
            CliError::Lib(E::Instability { .. }) => 4,
            CliError::Lib(_) => 2,
        }
    }

    /// One JSON object on stderr so callers can parse failures.
    fn report(&self) {
        let (kind, errors): (&str, Vec<serde_json::Value>) = match self {
            CliError::Validation(v) => (
                "validation",
                v.iter().map(|(k, r)| serde_json::json!({"key": k, "reason": r})).collect(),
            ),
            CliError::Lib(e) => {
                let kind = match e {
                    vibrofano::Error::Calibration(_) => "calibration",
                    vibrofano::Error::Instability { .. } => "instability",
                    _ => "validation",
                };
                let detail = match e {
                    vibrofano::Error::InvalidConfig { key, reason } => serde_json::json!({"key": key, "reason": reason}),
                    _ => serde_json::json!({"reason": e.to_string()}),
                };
                (kind, vec![detail])
            }
            CliError::Io(m) => ("io", vec![serde_json::json!({"reason": m})]),
            CliError::Usage(m) => ("usage", vec![serde_json::json!({"reason": m})]),
        };
        eprintln!("{}", serde_json::json!({"error": kind, "details": errors}));
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            scenario,
            config,
            out,
            sets,
            threads,
            cache_dir,
        } => {
            if let Some(n) = threads {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .map_err(|e| CliError::Usage(e.to_string()))?;
            }
            let eff = settings::prepare(settings::load(scenario, config.as_deref(), &sets)?)?;
            let mut artifacts = output::Artifacts::new(&out)?;
            let ctx = scenario::Context {
                eff: &eff,
                cache_dir: cache_dir.as_deref(),
            };
            scenario::run(scenario, &ctx, &mut artifacts)?;
            let manifest = artifacts.finish(scenario.name(), &eff)?;
            println!("{}", manifest.display());
            Ok(())
        }
        Command::Validate { config, scenario, sets } => {
            if !config.exists() {
                return Err(CliError::Io(format!("{}: no such file", config.display())));
            }
            let eff = settings::load(scenario, Some(&config), &sets)?;
            let problems = settings::report(&eff);
            if problems.is_empty() {
                println!("ok");
                Ok(())
            } else {
                for (k, r) in &problems {
                    println!("{k}: {r}");
                }
                Err(CliError::Validation(problems))
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            e.report();
            ExitCode::from(e.exit_code())
        }
    }
}
