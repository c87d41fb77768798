//! `iwavi`: simulate traces, train the adversarial/variational families,
//! run inference and evaluation, verify the theory suites, and probe
//! gradient SNR.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage error.

mod commands;
mod context;

use clap::{Parser, Subcommand};
use context::{CliError, RunContext};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "iwavi", version, about = "importance-weighted adversarial variational inference")]
struct Cli {
    /// Flat key-value config file (sections per subsystem).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a config entry: section.key=value (repeatable; wins over the
    /// file and over dedicated flags).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Output directory (default: $IWAVI_OUTPUT_ROOT/<subcommand> or
    /// ./iwavi-out/<subcommand>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Seed override (shorthand for <subcommand>.seed).
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic calcium trace with ground-truth spikes.
    Simulate {
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        rate: Option<f64>,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Train a model on a trace file.
    Train {
        /// Objective family: vae|iwae|avb|iw-avb|aae|iw-aae|vimco-fact|vimco-corr.
        #[arg(long)]
        objective: Option<String>,
        /// Importance samples per datum.
        #[arg(long)]
        k: Option<usize>,
        /// Paired trace file (fluorescence + spikes not required).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Posterior marginal spike probabilities for a trace.
    Infer {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Metrics for a trained model against a labelled trace.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run the exact-enumeration theory suites and print a pass/fail table.
    VerifyTheory {
        #[arg(long)]
        models: Option<usize>,
    },
    /// Gradient signal-to-noise sweep over k on the linear-Gaussian model.
    Snr {
        #[arg(long, value_name = "K1,K2,...")]
        k_list: Option<String>,
        #[arg(long)]
        repeats: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Domain(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let name = match &cli.command {
        Command::Simulate { .. } => "simulate",
        Command::Train { .. } => "train",
        Command::Infer { .. } => "infer",
        Command::Eval { .. } => "eval",
        Command::VerifyTheory { .. } => "verify-theory",
        Command::Snr { .. } => "snr",
    };
    let mut ctx = RunContext::prepare(name, &cli.config, &cli.overrides, &cli.out)?;

    match cli.command {
        Command::Simulate { frames, sigma, rate, tau } => {
            ctx.flag("simulate", "frames", frames);
            ctx.flag("simulate", "sigma", sigma);
            ctx.flag("simulate", "rate", rate);
            ctx.flag("simulate", "tau", tau);
            ctx.flag("simulate", "seed", cli.seed);
            ctx.reapply_overrides(&cli.overrides)?;
            commands::simulate(&mut ctx)
        }
        Command::Train { objective, k, data, steps } => {
            ctx.flag("train", "objective", objective);
            ctx.flag("train", "k", k);
            ctx.flag("train", "data", data.map(|p| p.display().to_string()));
            ctx.flag("train", "max_steps", steps);
            ctx.flag("train", "seed", cli.seed);
            ctx.reapply_overrides(&cli.overrides)?;
            commands::train(&mut ctx)
        }
        Command::Infer { checkpoint, trace } => {
            ctx.flag("infer", "checkpoint", checkpoint.map(|p| p.display().to_string()));
            ctx.flag("infer", "trace", trace.map(|p| p.display().to_string()));
            ctx.flag("infer", "seed", cli.seed);
            ctx.reapply_overrides(&cli.overrides)?;
            commands::infer(&mut ctx)
        }
        Command::Eval { checkpoint, data } => {
            ctx.flag("eval", "checkpoint", checkpoint.map(|p| p.display().to_string()));
            ctx.flag("eval", "data", data.map(|p| p.display().to_string()));
            ctx.flag("eval", "seed", cli.seed);
            ctx.reapply_overrides(&cli.overrides)?;
            commands::eval(&mut ctx)
        }
        Command::VerifyTheory { models } => {
            ctx.flag("theory", "models", models);
            ctx.flag("theory", "seed", cli.seed);
            ctx.reapply_overrides(&cli.overrides)?;
            commands::verify_theory(&mut ctx)
        }
        Command::Snr { k_list, repeats } => {
            ctx.flag("snr", "k_list", k_list);
            ctx.flag("snr", "repeats", repeats);
            ctx.flag("snr", "seed", cli.seed);
            ctx.reapply_overrides(&cli.overrides)?;
            commands::snr(&mut ctx)
        }
    }
}
