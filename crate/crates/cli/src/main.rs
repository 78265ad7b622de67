//! `yopo`: train networks against a first-layer-frozen adversary, audit the
//! gradient/costate machinery, sweep (m, n) budgets, and evaluate the
//! convergence bounds.
//!
//! Exit codes: 0 success, 1 a check or sweep cell failed, 2 usage/format
//! errors, 3 numeric failures.

mod attack;
mod bounds_cmd;
mod common;
mod data;
mod instances;
mod sweep;
mod train;
mod verify;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "yopo", version, about = "Robust training with a frozen first-layer costate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model with the coupled adversary.
    Train(train::TrainArgs),
    /// Attack a trained checkpoint and report robust accuracy.
    Attack(attack::AttackArgs),
    /// Run a verification suite against the implementation.
    Verify(verify::VerifyArgs),
    /// Train one model per (m, n) cell and tabulate robustness.
    Sweep(sweep::SweepArgs),
    /// Evaluate the convergence-bound formulas.
    Bounds(bounds_cmd::BoundsArgs),
}

fn main() {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Train(args) => train::run(args),
        Command::Attack(args) => attack::run(args),
        Command::Verify(args) => verify::run(args),
        Command::Sweep(args) => sweep::run(args),
        Command::Bounds(args) => bounds_cmd::run(args),
    };
    match outcome {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
