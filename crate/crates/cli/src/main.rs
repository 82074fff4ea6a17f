use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cbo_core::harness::{self, ExperimentConfig, RunStatus};
use cbo_core::CboError;
use clap::{Parser, Subcommand};

/// Consensus-based optimization experiments.
#[derive(Parser, Debug)]
#[command(name = "cbo", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run every replica of a config and write statistics, checks and a manifest.
    Run {
        config: PathBuf,
        /// Output directory (defaults to the config's `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace an existing run directory.
        #[arg(long)]
        force: bool,
    },
    /// One run per value of a scalar field.
    Sweep {
        config: PathBuf,
        /// n, N, noise_strength or dt
        #[arg(long)]
        axis: String,
        /// Comma-separated values; may be empty.
        #[arg(long, value_delimiter = ',', num_args = 0.., allow_hyphen_values = true)]
        values: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Run a validation suite: contracts, decay, bounds, meanfield or concentration.
    Validate {
        suite: String,
        /// Directory for suite reports (default: validate/ under the output root).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Pretty-print the aggregates of a finished run.
    Report { run_dir: PathBuf },
}

/// Exit status: 0 success, 1 check failure, 2 configuration error, 3 IO error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Ok = 0,
    CheckFailed = 1,
    Config = 2,
    Io = 3,
}

fn status_of(err: &CboError) -> Status {
    match err {
        CboError::Io { .. } => Status::Io,
        e if e.is_config_error() => Status::Config,
        // numerical failures during a run count as a failed check
        _ => Status::CheckFailed,
    }
}

fn default_root(sub: &str) -> PathBuf {
    match std::env::var(harness::OUTPUT_ROOT_ENV) {
        Ok(root) => Path::new(&root).join(sub),
        Err(_) => PathBuf::from(sub),
    }
}

fn execute(command: Command) -> Result<Status, CboError> {
    harness::init_global_workers()?;
    match command {
        Command::Run { config, out, force } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let dir = harness::resolve_output_dir(&cfg, out.as_deref())?;
            let manifest = harness::run(&cfg, &dir, force)?;
            for c in &manifest.checks {
                println!("{:<20} {}", c.name, if c.passed { "pass" } else { "FAIL" });
            }
            println!("wrote {}", dir.join(harness::MANIFEST_FILE).display());
            Ok(if manifest.passed() {
                Status::Ok
            } else {
                Status::CheckFailed
            })
        }
        Command::Sweep {
            config,
            axis,
            values,
            out,
            force,
        } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let dir = match out {
                Some(d) => d,
                None => harness::resolve_output_dir(&cfg, None)?.join(format!("sweep-{axis}")),
            };
            let (index, _) = harness::sweep(&cfg, &axis, &values, &dir, force)?;
            for e in &index.entries {
                println!(
                    "{axis}={:<12} {:<6} {}",
                    e.value,
                    if e.passed { "pass" } else { "FAIL" },
                    e.dir
                );
            }
            println!("wrote {}", dir.join(harness::INDEX_FILE).display());
            Ok(if index.entries.iter().all(|e| e.passed) {
                Status::Ok
            } else {
                Status::CheckFailed
            })
        }
        Command::Validate { suite, out, force } => {
            let dir = out.unwrap_or_else(|| default_root("validate"));
            let report = harness::validate(&suite, &dir, force)?;
            for o in &report.outcomes {
                println!("{:<28} {}", o.name, if o.passed { "pass" } else { "FAIL" });
            }
            println!(
                "suite {}: {}",
                report.suite,
                if report.passed { "pass" } else { "FAIL" }
            );
            Ok(if report.passed {
                Status::Ok
            } else {
                Status::CheckFailed
            })
        }
        Command::Report { run_dir } => {
            let (text, status) = harness::report(&run_dir)?;
            print!("{text}");
            Ok(match status {
                RunStatus::Complete(m) if m.passed() => Status::Ok,
                RunStatus::Complete(_) | RunStatus::Corrupt { .. } => Status::CheckFailed,
                RunStatus::Incomplete => Status::Io,
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                Status::Config as u8
            } else {
                0
            });
        }
    };
    match execute(cli.command) {
        Ok(status) => ExitCode::from(status as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(status_of(&e) as u8)
        }
    }
}
