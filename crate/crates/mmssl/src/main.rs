use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mmssl::commands::{cmd_ablate, cmd_generate, cmd_plot, cmd_train};
use mmssl::{log, CliResult};

#[derive(Parser)]
#[command(name = "mmssl", version, about = "Semi-supervised multimodal training experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (and its `.test.json` split).
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output dataset file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one model and write metrics, summary and checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Test split (default: `<data stem>.test.json` when present).
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a grid of toggle variants and seeds.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Plot a metric across run directories.
    Plot {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "accuracy")]
        metric: String,
        runs: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate { config, out, seed } => cmd_generate(config.as_deref(), &out, seed),
        Command::Train { config, data, test, out, seed } => {
            cmd_train(config.as_deref(), &data, test.as_deref(), &out, seed).map(drop)
        }
        Command::Ablate { config, data, out, seed } => cmd_ablate(config.as_deref(), data.as_deref(), &out, seed).map(drop),
        Command::Plot { out, metric, runs } => cmd_plot(&runs, &out, &metric),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error(&e.to_string());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
