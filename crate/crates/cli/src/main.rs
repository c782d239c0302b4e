//! `gradtrace` command-line front end.
//!
//! Exit codes: 0 success, 2 usage or configuration, 3 data, 4 I/O,
//! 5 internal invariant breach.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "gradtrace",
    version,
    about = "Trace generations back to influential training data with gradient sketches"
)]
pub struct Cli {
    /// TOML run file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by the pipeline commands.
#[derive(Args, Debug, Default, Clone)]
pub struct Common {
    /// Training dataset (JSON lines).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Model checkpoint.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Sketch cache file.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Number of top and bottom entries to report.
    #[arg(long = "k")]
    pub k: Option<usize>,
    /// Sketch length.
    #[arg(long = "K")]
    pub sketch_k: Option<u64>,
    /// Shuffle rounds.
    #[arg(long)]
    pub lambda: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for caching.
    #[arg(long)]
    pub workers: Option<usize>,
    /// sample, train-token, query-token or token-pair.
    #[arg(long)]
    pub mode: Option<String>,
    /// Learning rate (training) or its override (influence scaling).
    #[arg(long)]
    pub eta: Option<f64>,
    /// Epochs (training) or their override (influence scaling).
    #[arg(long)]
    pub epochs: Option<u64>,
    /// Output file or directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct QueryArgs {
    /// File holding the query sample (JSON lines; first sample unless --query-id).
    #[arg(long, conflicts_with = "prompt")]
    pub query: Option<PathBuf>,
    #[arg(long, requires = "query")]
    pub query_id: Option<u64>,
    /// Space-separated prompt tokens; the query is the model's greedy continuation.
    #[arg(long)]
    pub prompt: Option<String>,
    #[arg(long, default_value_t = 3)]
    pub max_tokens: usize,
    /// Generation position for query-token and token-pair modes.
    #[arg(long)]
    pub query_token: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic corpus.
    Corpus {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 500)]
        samples: usize,
        #[arg(long, default_value_t = 32)]
        vocab: usize,
        #[arg(long, default_value_t = 3)]
        prompt_len: usize,
        #[arg(long, default_value_t = 0.0)]
        fact_rate: f64,
        /// Poison this fraction of samples with the trigger and marker.
        #[arg(long)]
        poison_rate: Option<f64>,
        /// Flip the fact entity with this probability.
        #[arg(long)]
        perturb_p: Option<f64>,
    },
    /// Train the toy model.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        vocab: Option<usize>,
        #[arg(long)]
        context: Option<usize>,
        #[arg(long)]
        embed: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
        /// Mini-batch size; 0 trains full-batch.
        #[arg(long)]
        batch: Option<usize>,
    },
    /// Sketch and cache every training sample.
    Cache {
        #[command(flatten)]
        common: Common,
        /// Also cache per-token sketches (needed by token modes).
        #[arg(long)]
        tokens: bool,
    },
    /// Rank cached training data by influence on a query.
    Query {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        query: QueryArgs,
    },
    /// Rank training data with exact gradients.
    Oracle {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        query: QueryArgs,
    },
    /// Run an evaluation protocol end to end.
    Eval {
        #[arg(value_enum)]
        protocol: Protocol,
        #[command(flatten)]
        common: Common,
        /// Queries to evaluate.
        #[arg(long)]
        queries: Option<usize>,
        /// Use K equal to the padded length.
        #[arg(long)]
        lossless: bool,
    },
    /// Time sketch retrieval against exact retrieval.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        vectors: Option<usize>,
        #[arg(long)]
        raw_length: Option<u64>,
        #[arg(long)]
        queries: Option<usize>,
        /// Scratch directory for the vector files.
        #[arg(long)]
        work_dir: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    Fidelity,
    Backdoor,
    ErrorTracing,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(gradtrace::Error),
}

impl From<gradtrace::Error> for CliError {
    fn from(e: gradtrace::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use gradtrace::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e {
                E::Config(_) | E::Input(_) | E::BudgetExceeded { .. } => 2,
                E::Data(_)
                | E::Diverged { .. }
                | E::SpecMismatch { .. }
                | E::CorruptHeader { .. }
                | E::Checksum { .. }
                | E::Conflict(_) => 3,
                E::Io(_) => 4,
                E::Invariant(_) => 5,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gradtrace: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
