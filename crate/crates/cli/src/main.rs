//! `glassbox` — train, simplify, and explain a self-interpretable text
//! classifier from the command line.
//!
//! Exit codes: 0 success, 1 usage error (flags, config contents),
//! 2 data/model error (missing files, malformed corpora or checkpoints,
//! numerical failures).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use glassbox_core::Error;

/// Every failure a command can surface, bucketed by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Wrong invocation or invalid configuration contents → exit 1.
    Usage(String),
    /// Data, model, or I/O failure → exit 2 (except `Error::Config`,
    /// which is a configuration problem and therefore exit 1).
    Data(Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Data(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(Error::Config(_)) => 1,
            CliError::Data(_) => 2,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "glassbox",
    version,
    about = "Self-interpretable text classification: train a small text \
             CNN, unwrap its exact per-region linear models, simplify \
             them, and emit interpretation reports."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Path to the JSON run configuration (all fields optional).
    #[arg(long)]
    config: PathBuf,
    /// Override one config field by dotted path, e.g.
    /// --set train.epochs=5 or --set lambda_values=[0,0.1]
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Override the dataset-split, model-init, and training seeds at once.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint.json + history.csv.
    Train(CommonArgs),
    /// Grid-sweep filters-per-width × hidden units; write sweep_complexity.csv.
    SweepComplexity(CommonArgs),
    /// Sweep the L1 strength grid; write sweep_lambda.csv and report the
    /// selected value.
    SweepLambda(CommonArgs),
    /// Enumerate activation regions of a checkpoint; write region_table.csv.
    Unwrap(CommonArgs),
    /// Cluster region linear models and refit; write merged.json +
    /// merge_report.csv.
    Merge(CommonArgs),
    /// Emit interpretation reports (report.md, report.json, histograms).
    Explain(CommonArgs),
    /// Print accuracy, AUC, and F1 of a checkpoint on a dataset split.
    Eval(CommonArgs),
}

/// Honor GLASSBOX_THREADS before any parallel work starts.
fn configure_threads() -> Result<(), CliError> {
    match std::env::var("GLASSBOX_THREADS") {
        Err(_) => Ok(()),
        Ok(raw) => {
            let threads: usize = raw.trim().parse().map_err(|_| {
                CliError::Usage(format!(
                    "GLASSBOX_THREADS must be a positive integer, got {raw:?}"
                ))
            })?;
            if threads == 0 {
                return Err(CliError::Usage(
                    "GLASSBOX_THREADS must be a positive integer, got 0".into(),
                ));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build_global()
                .map_err(|e| CliError::Usage(format!("thread pool setup failed: {e}")))
        }
    }
}

type CommandFn = fn(&config::RunConfig) -> Result<(), CliError>;

fn dispatch(command: Command) -> Result<(), CliError> {
    let (args, run): (&CommonArgs, CommandFn) = match &command {
        Command::Train(a) => (a, commands::train),
        Command::SweepComplexity(a) => (a, commands::sweep_complexity_cmd),
        Command::SweepLambda(a) => (a, commands::sweep_lambda_cmd),
        Command::Unwrap(a) => (a, commands::unwrap),
        Command::Merge(a) => (a, commands::merge),
        Command::Explain(a) => (a, commands::explain),
        Command::Eval(a) => (a, commands::eval),
    };
    let cfg = config::load_config(&args.config, &args.set, args.seed)?;
    run(&cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own message (help/version exit 0).
            let _ = e.print();
            return match e.exit_code() {
                0 => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    if let Err(e) = configure_threads().and_then(|()| dispatch(cli.command)) {
        eprintln!("error: {e}");
        return ExitCode::from(e.exit_code());
    }
    ExitCode::SUCCESS
}
