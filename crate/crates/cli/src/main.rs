//! `coref`: train, predict, evaluate and analyze span-ranking coreference
//! models.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "coref", version, about = "End-to-end span-ranking coreference resolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on `paths.train`, early-stopping on `paths.dev`.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
        /// Continue from the trainer state in the checkpoint directory.
        #[arg(long)]
        resume: bool,
    },
    /// Write predicted clusters as CoNLL plus a JSON-lines sidecar.
    Predict {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Checkpoint to use; repeat to ensemble.
        #[arg(long = "model")]
        models: Vec<PathBuf>,
        /// Sidecar path; defaults to the output path with `.jsonl` appended.
        #[arg(long)]
        sidecar: Option<PathBuf>,
        /// Include head attention records in the sidecar.
        #[arg(long)]
        attention: bool,
    },
    /// Score a system CoNLL file against a gold one.
    Evaluate {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        system: PathBuf,
    },
    /// Mention recall over a λ sweep, constituency precision by width and
    /// head attention of predicted mentions.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long = "model")]
        model: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.1, 0.2, 0.3, 0.4, 0.5])]
        lambda_sweep: Vec<f64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            config,
            seed,
            max_epochs,
            checkpoint_dir,
            resume,
        } => commands::train(&config, commands::TrainOverrides {
            seed,
            max_epochs,
            checkpoint_dir,
            resume,
        }),
        Command::Predict {
            config,
            input,
            output,
            models,
            sidecar,
            attention,
        } => commands::predict(&config, &input, &output, &models, sidecar.as_deref(), attention),
        Command::Evaluate { gold, system } => commands::evaluate(&gold, &system),
        Command::Analyze {
            config,
            input,
            model,
            lambda_sweep,
        } => commands::analyze(&config, &input, &model, &lambda_sweep),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
