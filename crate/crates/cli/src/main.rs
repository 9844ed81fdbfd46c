//! Command-line entry point: training, evaluation, gradient checking,
//! ablations, and augmentation previews.
//!
//! Exit codes are a stable contract: 0 success, 1 runtime failure,
//! 2 config/usage failure, 3 integrity failure.

mod commands;

use clap::{Parser, Subcommand};
use hnpm_core::Error;

#[derive(Parser)]
#[command(name = "hnpm", version, about = "Student-teacher contrastive learning with hard negative pair mining")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a student-teacher pair and write checkpoints plus metrics.
    Train(commands::train::TrainArgs),
    /// Probe a checkpoint with a linear or k-NN evaluation.
    Eval(commands::eval::EvalArgs),
    /// Check analytic gradients against central finite differences.
    Gradcheck(commands::gradcheck::GradcheckArgs),
    /// Sweep one hyperparameter axis and compare outcomes.
    Ablate(commands::ablate::AblateArgs),
    /// Run the image augmentation pipeline on a PNG for inspection.
    AugmentPreview(commands::preview::PreviewArgs),
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::Integrity(_) | Error::Version { .. } => 3,
        _ => 1,
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => commands::train::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::Gradcheck(args) => commands::gradcheck::run(args),
        Command::Ablate(args) => commands::ablate::run(args),
        Command::AugmentPreview(args) => commands::preview::run(args),
    };
    match result {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(exit_code(&err));
        }
    }
}
