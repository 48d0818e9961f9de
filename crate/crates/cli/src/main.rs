//! `memex`: generate, index, train, evaluate and query photo-album QA models.

mod commands;
mod repl;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<memex_core::Error> for CliError {
    fn from(e: memex_core::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "memex", version, about = "Question answering over personal photo albums")]
pub struct Cli {
    /// key = value file; flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every random choice (default: MEMEX_SEED, then 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for batch parallelism.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Machine-readable output on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// Directory with albums.json, photos.json, qas.json and features.bin.
    #[arg(long, value_name = "DIR")]
    pub corpus: Option<PathBuf>,
    /// Feature file (default: <corpus>/features.bin).
    #[arg(long, value_name = "FILE")]
    pub features: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Photos retrieved per question.
    #[arg(short, long)]
    pub k: Option<usize>,
    /// Skip-gram word vector size.
    #[arg(long)]
    pub word_dim: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus with planted answers.
    Gen {
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        albums: Option<usize>,
        #[arg(long)]
        photos: Option<usize>,
        #[arg(long)]
        qas_per_photo: Option<usize>,
        #[arg(long)]
        feature_dim: Option<usize>,
    },
    /// Validate a corpus and optionally write it back canonically.
    Ingest {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Counts, 4W distribution and KL divergence from a reference.
    Stats {
        #[command(flatten)]
        corpus: CorpusArgs,
        /// JSON object with what/when/who/where probabilities.
        #[arg(long, value_name = "FILE")]
        reference: Option<PathBuf>,
    },
    /// Build the BM25 index and save a snapshot.
    Index {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Top-k photos of one user for a query.
    Search {
        user: String,
        query: String,
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Saved index snapshot (default: build from the corpus).
        #[arg(long, value_name = "FILE")]
        index: Option<PathBuf>,
        #[arg(short, long)]
        k: Option<usize>,
    },
    /// Pretrain the question encoder on question types.
    Pretrain {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Train memexnet or a baseline (bow, logreg, embedding, lstm, lstm_att, lstm_multichannel).
    Train {
        kind: String,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
        /// Pretrained encoder checkpoint (memexnet only).
        #[arg(long, value_name = "FILE")]
        pretrained: Option<PathBuf>,
    },
    /// Accuracy report of a checkpoint on a split.
    Eval {
        checkpoint: PathBuf,
        #[command(flatten)]
        corpus: CorpusArgs,
        /// train, val, test or all.
        #[arg(long)]
        split: Option<String>,
    },
    /// Interactive question answering with a memexnet checkpoint.
    Ask {
        checkpoint: PathBuf,
        user: String,
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Print the full trace as JSON after each answer.
        #[arg(long)]
        explain: bool,
    },
    /// Finite-difference gradient check of a model kind (or `all`).
    GradCheck {
        kind: String,
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Coordinates checked per parameter.
        #[arg(long)]
        per_param: Option<usize>,
    },
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging(cli.verbose);
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
