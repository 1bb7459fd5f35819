//! `infostate`: identification, prediction and control experiments from
//! JSON configuration files.
//!
//! Exit codes: 0 when every threshold holds, 1 on invalid input or any
//! other error, 2 when a threshold is violated (reports are still written).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use commands::{Outcome, RunContext};
use config::{ExperimentConfig, OrderChoice};

#[derive(Debug, Parser)]
#[command(name = "infostate", version, about = "Information-state identification and control experiments")]
struct Cli {
    /// Experiment configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// RNG seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// ARMA order, `auto` or a positive integer; overrides the config.
    #[arg(long, global = true)]
    q: Option<OrderChoice>,
    /// Relative singular-value cutoff; overrides the config.
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a rollout batch (CSV plus metadata JSON).
    Simulate,
    /// Fit ARMA coefficients, realize the information-state model and check
    /// held-out predictions.
    Identify {
        /// Batch CSV written by `simulate`; generated from the config if absent.
        #[arg(long)]
        batch: Option<PathBuf>,
    },
    /// Per-step prediction error of a saved ARMA model.
    Predict {
        /// ARMA model JSON written by `identify`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        batch: Option<PathBuf>,
    },
    /// Compare information-state LQR with full-state LQR on the plant.
    Control {
        /// Information-state model JSON; identified from fresh data if absent.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Observer Markov parameter baseline and its mismatch report.
    Okid,
    /// Noise-corrected identification against the uncorrected estimate.
    NoiseIdentify,
}

fn run(cli: Cli) -> Result<Outcome> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(q) = cli.q {
        cfg.q = q;
    }
    if let Some(tol) = cli.tol {
        cfg.tol = tol;
    }
    let out = cli.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let exp = cfg.build()?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let ctx = RunContext { cfg: &cfg, exp, out };
    match &cli.command {
        Command::Simulate => commands::simulate(&ctx),
        Command::Identify { batch } => commands::identify(&ctx, batch.as_deref()),
        Command::Predict { model, batch } => commands::predict(&ctx, model, batch.as_deref()),
        Command::Control { model } => commands::control(&ctx, model.as_deref()),
        Command::Okid => commands::okid(&ctx),
        Command::NoiseIdentify => commands::noise_identify(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(Outcome { passed: true, message }) => {
            println!("{message}");
            ExitCode::SUCCESS
        }
        Ok(Outcome { passed: false, message }) => {
            eprintln!("threshold violated: {message}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
