//! `tjflow`: batch driver for triple-junction flow experiments.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 degenerate
//! minimizer, 3 curve collapse, 4 solver divergence, 5 insufficient data.
//! Failures print one line `error code=N kind=K message="..."` to stderr.

// `!(x > 0.0)` is used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{CliError, CmdResult};
use config::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "tjflow",
    version,
    about = "Anisotropic curve shortening flow of a triple-junction network"
)]
struct Cli {
    /// TOML experiment config; defaults are used for missing sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Perturbation seed, overriding `perturbation.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the straight-line minimizer and write the frame.
    Minimize,
    /// Perturb the minimizer and run the flow.
    Flow,
    /// Fit the LSI exponent and check the linearized problem for a trajectory.
    Diagnose {
        /// Trajectory CSV; defaults to `<out>/trajectory.csv`.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Report admissibility and compatibility of the configured initial data.
    Check,
    /// Sample the boundary of the unit ball of φ.
    Wulff {
        #[arg(long, default_value_t = 256)]
        samples: usize,
    },
}

fn load(cli: &Cli) -> CmdResult<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError {
                code: 1,
                kind: "config",
                message: format!("{}: {e}", path.display()),
            })?;
            ExperimentConfig::from_toml(&text).map_err(CliError::config)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out_dir = out.to_string_lossy().into_owned();
    }
    if let Some(seed) = cli.seed {
        cfg.perturbation.seed = seed;
    }
    cfg.validate().map_err(CliError::config)?;
    Ok(cfg)
}

fn run(cli: Cli) -> CmdResult<()> {
    let cfg = load(&cli)?;
    let quiet = cli.quiet;
    match cli.command {
        Command::Minimize => commands::minimize(cfg, quiet),
        Command::Flow => commands::flow(cfg, quiet),
        Command::Diagnose { trajectory } => {
            let path =
                trajectory.unwrap_or_else(|| PathBuf::from(&cfg.out_dir).join("trajectory.csv"));
            commands::diagnose(cfg, &path, quiet)
        }
        Command::Check => commands::check(cfg, quiet),
        Command::Wulff { samples } => commands::wulff(cfg, samples, quiet),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        // Usage errors share the configuration exit code.
        Err(e) => {
            let message = e.to_string();
            let first = message
                .lines()
                .next()
                .unwrap_or_default()
                .trim_start_matches("error: ");
            eprintln!("error code=1 kind=usage message={first:?}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "error code={} kind={} message={:?}",
                e.code, e.kind, e.message
            );
            ExitCode::from(e.code as u8)
        }
    }
}
