//! `sfid`: fit, apply and evaluate embedding debiasers.
//!
//! Exit codes: 0 success, 2 data error, 3 configuration error, 4 training
//! divergence. Errors are printed as `<class>: <message>`.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{apply, compare, curve, eval, fit, sweep, synth};
use crate::config::Config;
use crate::error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "sfid", version, about = "Selective feature imputation and baseline debiasers for frozen embeddings")]
struct Cli {
    /// Root seed; every random component derives its own stream from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML file with default settings; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a debiasing model on labelled embeddings.
    Fit(fit::FitArgs),
    /// Apply a fitted model to an embedding file.
    Apply(apply::ApplyArgs),
    /// Compute task metrics into a report.
    Eval(eval::EvalArgs),
    /// Export sorted feature importances for choosing k.
    ImportanceCurve(curve::CurveArgs),
    /// Fit and evaluate over a grid of k, tau or lambda values.
    Sweep(sweep::SweepArgs),
    /// Generate a synthetic scenario with known bias.
    Synth(synth::SynthArgs),
    /// Tabulate several reports side by side.
    Compare(compare::CompareArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Fit(_) => "fit",
            Command::Apply(_) => "apply",
            Command::Eval(_) => "eval",
            Command::ImportanceCurve(_) => "importance-curve",
            Command::Sweep(_) => "sweep",
            Command::Synth(_) => "synth",
            Command::Compare(_) => "compare",
        }
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    let cfg = Config::load(cli.config.as_deref(), cli.command.name())?;
    let seed = cfg.or(cli.seed, "seed", 0u64)?;
    match &cli.command {
        Command::Fit(a) => fit::run(a, &cfg, seed),
        Command::Apply(a) => apply::run(a, &cfg, seed),
        Command::Eval(a) => eval::run(a, &cfg, seed),
        Command::ImportanceCurve(a) => curve::run(a, &cfg, seed),
        Command::Sweep(a) => sweep::run(a, &cfg, seed),
        Command::Synth(a) => synth::run(a, &cfg, seed),
        Command::Compare(a) => compare::run(a, &cfg, seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
