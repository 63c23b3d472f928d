//! Configuration, experiment orchestration and CSV/JSON output for the
//! `sketchfl` command-line tool.

pub mod config;
pub mod experiment;
pub mod output;
pub mod sweep;

use thiserror::Error;

pub use config::{ConfigError, ExperimentConfig};
pub use output::{Artifacts, Assertion, Summary};

/// Anything that stops a subcommand before it produces artifacts.
#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] sketchfl::Error),
    #[error("bad input: {0}")]
    Input(String),
    #[error("cannot write {path}: {source}")]
    Write {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

/// The subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    VerifySketch,
    RunFl,
    RunDpFl,
    AccountPrivacy,
    Attack,
    Sweep,
}

/// Runs `command` on `config` with `seed`.
pub fn run_command(command: Command, config: &ExperimentConfig, seed: u64) -> Result<Artifacts, CliError> {
    use experiment::*;
    match command {
        Command::VerifySketch => verify_sketch_experiment(config, seed),
        Command::RunFl => run_fl_experiment(config, seed),
        Command::RunDpFl => run_dp_fl_experiment(config, seed),
        Command::AccountPrivacy => account_privacy_experiment(config, seed),
        Command::Attack => attack_experiment(config, seed),
        Command::Sweep => sweep_experiment(config, seed),
    }
}
