use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use glha::cli::run_command;

#[derive(Parser)]
#[command(
    name = "glha",
    version,
    about = "Synthetic two-view correspondence pruning: data generation, ratio prior, guided-loss cascade training, evaluation, weight-solver fuzzing, and pose benchmarking"
)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/val/test correspondence datasets
    Gen(CommonArgs),
    /// Fit the match-ratio prior on the train split
    Prior(CommonArgs),
    /// Train the classifier and write checkpoint plus curves
    Train(CommonArgs),
    /// Score a checkpoint on a split and write metrics.json
    Eval(CommonArgs),
    /// Fuzz the guided-weight solver's correlation guarantee
    Theorem(CommonArgs),
    /// Compare robust estimation with and without the classifier
    Posebench(CommonArgs),
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Path to the JSON run config
    #[arg(long)]
    config: PathBuf,
    /// Force single-threaded execution (recorded in outputs)
    #[arg(long)]
    deterministic: bool,
    /// Output directory for generated files
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let (name, common) = match &args.command {
        Command::Gen(c) => ("gen", c),
        Command::Prior(c) => ("prior", c),
        Command::Train(c) => ("train", c),
        Command::Eval(c) => ("eval", c),
        Command::Theorem(c) => ("theorem", c),
        Command::Posebench(c) => ("posebench", c),
    };
    match run_command(name, &common.config, &common.out, common.deterministic) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", err.to_json());
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
