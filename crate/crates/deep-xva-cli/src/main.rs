//! `deep-xva`: configuration-driven runner for the deep-xva library.
//!
//! Exit codes: 0 success, 1 validation failure, 2 config error,
//! 3 runtime/divergence.

mod config;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pipeline::{CliError, Command};

#[derive(Parser)]
#[command(
    name = "deep-xva",
    about = "Neural BSDE solver for exposure profiles and valuation adjustments"
)]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Subcommand)]
enum CliCommand {
    /// Train the clean-value equation of every claim and persist the solutions
    TrainClean(RunArgs),
    /// Discounted expected positive/negative exposure profile of the portfolio
    Exposure(RunArgs),
    /// Non-recursive CVA/DVA by outer Monte Carlo quadrature
    XvaMc(RunArgs),
    /// Recursive xVA by training the adjustment equation on portfolio paths
    XvaBsde(RunArgs),
    /// Pathwise first-order hedge ratios along outer paths
    Sensitivities(RunArgs),
    /// Per-path collateral account simulation
    Collateral(RunArgs),
    /// Closed-form oracle cross-checks (no training)
    Validate(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// Experiment definition file
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config's outputs.directory)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match &cli.command {
        CliCommand::TrainClean(a) => (Command::TrainClean, a),
        CliCommand::Exposure(a) => (Command::Exposure, a),
        CliCommand::XvaMc(a) => (Command::XvaMc, a),
        CliCommand::XvaBsde(a) => (Command::XvaBsde, a),
        CliCommand::Sensitivities(a) => (Command::Sensitivities, a),
        CliCommand::Collateral(a) => (Command::Collateral, a),
        CliCommand::Validate(a) => (Command::Validate, a),
    };

    let (config, hash) = match config::load_config(&args.config) {
        Ok(pair) => pair,
        Err(errors) => {
            eprintln!("config error ({} problems):", errors.len());
            for e in &errors {
                eprintln!("  - {e}");
            }
            return ExitCode::from(2);
        }
    };

    match pipeline::run(&config, &hash, command, args.out.as_deref()) {
        Ok(manifest) => {
            println!(
                "{}: wrote {} artifact(s) [config {}]",
                manifest.command,
                manifest.artifacts.len(),
                &manifest.config_hash[..12]
            );
            for (key, value) in &manifest.diagnostics {
                println!("  {key} = {value:.6}");
            }
            ExitCode::SUCCESS
        }
        Err(CliError::Validation(msg)) => {
            eprintln!("validation failure: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("runtime error: {msg}");
            ExitCode::from(3)
        }
    }
}
