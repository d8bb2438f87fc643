//! Command-line front end for the multimodal traffic forecaster.

pub mod commands;
pub mod config;
pub mod plot;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::Outcome;
use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "hmdlf", version, about = "Multimodal deep traffic forecaster")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Overrides such as `train.max_epochs=20`.
    #[arg(value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic flow/speed/journey-time CSV.
    Synth(Common),
    /// Train a network and write a model file.
    Train(Common),
    /// Score a saved model and write predictions.
    Evaluate(Common),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(Common),
    /// Run baselines and networks over a grid and tabulate test RMSE.
    Compare(Common),
}

/// Exit status for a success, a user or configuration error, and a
/// numerical failure or failed check.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

/// Runs one parsed invocation and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let (common, name) = match &cli.command {
        Command::Synth(c) => (c, "synth"),
        Command::Train(c) => (c, "train"),
        Command::Evaluate(c) => (c, "evaluate"),
        Command::Gradcheck(c) => (c, "gradcheck"),
        Command::Compare(c) => (c, "compare"),
    };
    let result = RunConfig::load(common.config.as_deref(), &common.overrides).and_then(|config| {
        log::info!("{name}: {}", config.echo());
        match cli.command {
            Command::Synth(_) => commands::cmd_synth(&config),
            Command::Train(_) => commands::cmd_train(&config),
            Command::Evaluate(_) => commands::cmd_evaluate(&config),
            Command::Gradcheck(_) => commands::cmd_gradcheck(&config),
            Command::Compare(_) => commands::cmd_compare(&config),
        }
    });
    match result {
        Ok(Outcome { summary, passed }) => {
            println!("{summary}");
            if passed {
                EXIT_OK
            } else {
                eprintln!("hmdlf {name}: one or more checks failed");
                EXIT_NUMERICAL
            }
        }
        Err(e) => {
            eprintln!("hmdlf {name}: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_USER
            }
        }
    }
}
