use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sketchfl_cli::{run_command, CliError, Command, ExperimentConfig};

#[derive(Parser)]
#[command(name = "sketchfl", version, about = "Sketched federated learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Certify sketch families against their embedding moments.
    VerifySketch(Common),
    /// Run sketched federated learning and overlay the convergence bound.
    RunFl(Common),
    /// Run the private variant and report its budget.
    RunDpFl(Common),
    /// Compose a per-step privacy guarantee.
    AccountPrivacy(Common),
    /// Reconstruct an input from an observed gradient.
    Attack(Common),
    /// Rounds and bits to a target accuracy across sketch sizes.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML, or JSON by extension).
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the config.
    #[arg(long, env = "SKFL_SEED")]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, env = "SKFL_OUT")]
    out: Option<PathBuf>,
    /// Exit non-zero when an assertion fails (default).
    #[arg(long, overrides_with = "no_assert")]
    assert: bool,
    /// Always exit zero once artifacts are written.
    #[arg(long = "no-assert")]
    no_assert: bool,
}

fn execute(command: Command, args: &Common) -> Result<bool, CliError> {
    let config = ExperimentConfig::load(&args.config)?;
    let seed = args.seed.unwrap_or(config.seed);
    let out = args
        .out
        .clone()
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let artifacts = run_command(command, &config, seed)?;
    artifacts
        .write(&out)
        .map_err(|source| CliError::Write { path: out.clone(), source })?;
    for a in &artifacts.summary.assertions {
        println!("{} {}: {}", if a.pass { "PASS" } else { "FAIL" }, a.name, a.detail);
    }
    for w in &artifacts.summary.warnings {
        eprintln!("warning: {w}");
    }
    Ok(artifacts.summary.pass || args.no_assert)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match &cli.command {
        Sub::VerifySketch(a) => (Command::VerifySketch, a),
        Sub::RunFl(a) => (Command::RunFl, a),
        Sub::RunDpFl(a) => (Command::RunDpFl, a),
        Sub::AccountPrivacy(a) => (Command::AccountPrivacy, a),
        Sub::Attack(a) => (Command::Attack, a),
        Sub::Sweep(a) => (Command::Sweep, a),
    };
    match execute(command, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
