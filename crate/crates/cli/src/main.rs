//! Command-line front end. Exit codes: 0 success, 1 configuration or I/O
//! problem, 2 numeric failure during a run.

use clap::{Parser, Subcommand};

use cdnas_core::error::Error;

mod run;
mod store;

#[derive(Parser)]
#[command(name = "cdnas", version, about = "Spoof-detection dataset, network, and search toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-domain clip dataset
    Gen(run::GenArgs),
    /// Collapse a clip into a rank-pooled dynamic image
    Dynimg(run::DynimgArgs),
    /// Train a reference depth network
    Train(run::TrainArgs),
    /// Run differentiable architecture search
    Search(run::SearchArgs),
    /// Train a discretized genotype from scratch
    Retrain(run::RetrainArgs),
    /// Score a checkpoint on a dataset partition
    Eval(run::EvalArgs),
    /// Pit a searched genotype against random ones
    Compare(run::CompareArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen(a) => run::gen(a),
        Command::Dynimg(a) => run::dynimg(a),
        Command::Train(a) => run::train(a),
        Command::Search(a) => run::search(a),
        Command::Retrain(a) => run::retrain(a),
        Command::Eval(a) => run::eval(a),
        Command::Compare(a) => run::compare(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(match e {
            Error::Numeric(_) => 2,
            _ => 1,
        });
    }
}
