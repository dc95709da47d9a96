//! `jointcal`: calibrate sample weights to totals and quantiles, estimate
//! from weighted samples, and run the Monte Carlo comparison.

mod calibrate;
mod estimate;
mod manifest;
mod simulate;
mod table;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "jointcal", version, about)]
struct Cli {
    /// Master seed; overrides the seed in a simulation config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for simulations (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print nothing on success.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute calibration weights for a sample.
    Calibrate(calibrate::CalibrateArgs),
    /// Estimate totals, means and quantiles from a weighted sample.
    Estimate(estimate::EstimateArgs),
    /// Run the Monte Carlo study described by a config file.
    Simulate(simulate::SimulateArgs),
}

pub struct Global {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

/// Result of a command that got past input validation.
pub enum Outcome {
    Done(String),
    NotConverged(String),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let global = Global {
        seed: cli.seed,
        threads: cli.threads,
    };
    if global.threads == Some(0) {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(1);
    }
    let result = match &cli.command {
        Command::Calibrate(a) => calibrate::run(a, &global),
        Command::Estimate(a) => estimate::run(a, &global),
        Command::Simulate(a) => simulate::run(a, &global),
    };
    match result {
        Ok(Outcome::Done(msg)) => {
            if !cli.quiet {
                eprintln!("{msg}");
            }
            ExitCode::SUCCESS
        }
        Ok(Outcome::NotConverged(msg)) => {
            eprintln!("not converged: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
