//! `gil`: command-line front end for gate-conditioned innovation statistics.

mod args;
mod commands;
mod config_file;
mod output;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

/// Failure classes with distinct exit statuses.
#[derive(Debug)]
pub enum Failure {
    /// Invalid flags or input (status 2).
    Usage(anyhow::Error),
    /// Divergence, I/O and other runtime failures (status 1).
    Runtime(anyhow::Error),
}

fn main() -> ExitCode {
    let argv = match config_file::expand(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::try_parse_from(argv).unwrap_or_else(|e| e.exit());
    let result = match &cli.command {
        Command::GammaTable(a) => commands::gamma_table(a),
        Command::GateExperiment(a) => commands::gate_experiment(a),
        Command::NnExperiment(a) => commands::nn_experiment(a),
        Command::Track(a) => commands::track(a),
        Command::NisCorrect(a) => commands::nis_correct(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
