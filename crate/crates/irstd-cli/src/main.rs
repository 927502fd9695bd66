//! Infrared small target detection toolkit.

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use irstd_cli::commands;

/// Synthetic-scene infrared small target detection: dataset generation,
/// network training and evaluation, the patch-image RPCA baseline, and
/// spectrum/ROC analysis.
#[derive(Parser)]
#[command(name = "irstd", version, about, max_term_width = 100)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a reproducible synthetic dataset (PGM images + masks +
    /// manifest.json).
    SynthGen(commands::synth_gen::SynthGenArgs),
    /// Train the detector on a generated dataset.
    Train(commands::train::TrainArgs),
    /// Evaluate a checkpoint: pixel/object metrics and a ROC sweep.
    Eval(commands::eval::EvalArgs),
    /// Training-free detector: patch-image RPCA decomposition.
    RpcaBaseline(commands::rpca::RpcaArgs),
    /// Singular value spectrum of an image's patch matrix.
    Svspectrum(commands::spectrum::SpectrumArgs),
    /// ROC sweep over stored confidence maps.
    Roc(commands::roc::RocArgs),
    /// Finite-difference gradient verification of the network.
    Gradcheck(commands::gradcheck::GradcheckArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::SynthGen(args) => commands::synth_gen::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::RpcaBaseline(args) => commands::rpca::run(args),
        Command::Svspectrum(args) => commands::spectrum::run(args),
        Command::Roc(args) => commands::roc::run(args),
        Command::Gradcheck(args) => commands::gradcheck::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.report(),
    }
}
