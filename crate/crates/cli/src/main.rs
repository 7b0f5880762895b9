mod commands;
mod server;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

/// Train, evaluate and serve the copy-hook summarizer.
#[derive(Parser, Debug)]
#[command(name = "csi", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SummarizeMode {
    #[value(name = "init_with")]
    InitWith,
    Add,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic corpus with gold copy tags as JSON lines.
    GenCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        sentences: usize,
        #[arg(long)]
        seed: u64,
    },
    /// Train the forward model, and the backward model with --backward.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        epochs: usize,
        #[arg(long)]
        hidden_dim: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        backward: bool,
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        learning_rate: f64,
    },
    /// Score a trained model directory on the held-out tenth of a corpus.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Serve the JSON API.
    Serve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long)]
        persist: Option<PathBuf>,
    },
    /// Summarize a text file and print the resulting session.
    Summarize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Comma-separated sentence indices, or "all".
        #[arg(long, default_value = "all")]
        select: String,
        #[arg(long, value_enum, default_value = "init_with")]
        mode: SummarizeMode,
        #[arg(long, default_value_t = 3)]
        n: usize,
    },
    /// Attribute a summary file to the words of an input file.
    Attribute {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        summary: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Print the train-and-lever walk-through of forward and backward inference.
    LeverDemo,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
