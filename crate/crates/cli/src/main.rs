mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pads_core::eval::EvalMode;
use pads_core::retrieval::Strategy;

#[derive(Parser, Debug)]
#[command(name = "pads", version, about = "Demonstration retrieval, candidate generation and reranking for LLM summarization")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by every subcommand. Flags override the config file.
#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Corpus of inference documents (JSONL).
    #[arg(long, global = true)]
    test: Option<PathBuf>,
    /// Demonstration pool (JSONL).
    #[arg(long, global = true)]
    pool: Option<PathBuf>,
    #[arg(long, global = true)]
    strategy: Option<Strategy>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Candidates per request.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Format re-prompts before a document is skipped.
    #[arg(long, global = true)]
    retries: Option<usize>,
    #[arg(long, global = true)]
    temperature: Option<f64>,
    #[arg(long = "model-name", global = true)]
    model_name: Option<String>,
    /// Answer chat requests from this replay file.
    #[arg(long, global = true, conflicts_with = "endpoint")]
    replay: Option<PathBuf>,
    /// OpenAI-compatible chat completions URL.
    #[arg(long, global = true)]
    endpoint: Option<String>,
    /// Append live exchanges to this replay file.
    #[arg(long, global = true)]
    record: Option<PathBuf>,
    #[arg(long, global = true)]
    provider: Option<ProviderArg>,
    /// Precomputed embedding file (JSONL of {id, vector}).
    #[arg(long, global = true)]
    embeddings: Option<PathBuf>,
    #[arg(long = "provider-endpoint", global = true)]
    provider_endpoint: Option<String>,
    #[arg(long, global = true)]
    dim: Option<usize>,
    #[arg(long, global = true)]
    concurrency: Option<usize>,
    /// Ranker checkpoint.
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    #[arg(long = "output-dir", global = true)]
    output_dir: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ProviderArg {
    Hashed,
    Precomputed,
    Remote,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum DemoArg {
    None,
    Random,
    Similar,
    UpperBound,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ShapeArg {
    MultiTurn,
    Concatenated,
    Both,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Document count and average token lengths of a corpus.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Rank pool documents against a query text or every document of --test.
    Retrieve {
        #[arg(long)]
        query: Option<String>,
        #[arg(long = "top-k", default_value_t = 5)]
        top_k: usize,
    },
    /// Generate candidate summaries for --test and write candidate records.
    Generate {
        #[arg(long, value_enum, default_value_t = DemoArg::Similar)]
        demo: DemoArg,
        /// Show the demonstration without its summary.
        #[arg(long = "no-summary")]
        no_summary: bool,
        #[arg(long, value_enum, default_value_t = ShapeArg::MultiTurn)]
        shape: ShapeArg,
        /// Output file (defaults to <output-dir>/candidates.jsonl).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the two-phase reranker.
    TrainRanker {
        /// Training-instance file.
        #[arg(long, conflicts_with = "candidates")]
        instances: Option<PathBuf>,
        /// Candidate records; gold summaries are read from --test.
        #[arg(long)]
        candidates: Option<PathBuf>,
        /// Also write the assembled training instances here.
        #[arg(long = "save-instances")]
        save_instances: Option<PathBuf>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long = "lr-backbone")]
        lr_backbone: Option<f64>,
        #[arg(long = "lr-head")]
        lr_head: Option<f64>,
        #[arg(long = "epochs-phase1")]
        epochs_phase1: Option<usize>,
        #[arg(long = "epochs-phase2")]
        epochs_phase2: Option<usize>,
        #[arg(long = "batch-size")]
        batch_size: Option<usize>,
    },
    /// Pick the best candidate per document with a trained ranker.
    Rank {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run evaluation modes and write report.json and report.txt.
    Evaluate {
        /// Repeat for several modes; `all` runs every mode.
        #[arg(long = "mode", value_parser = parse_modes)]
        modes: Vec<Vec<EvalMode>>,
    },
    /// Best and worst candidate relative to the first one.
    Spread {
        #[arg(long)]
        candidates: PathBuf,
    },
    /// Similar-demonstration scores per retrieval strategy, relative to zero-shot.
    CompareRetrievers,
}

fn parse_modes(s: &str) -> Result<Vec<EvalMode>, String> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(EvalMode::ALL.to_vec());
    }
    s.parse::<EvalMode>().map(|m| vec![m]).map_err(|e| e.to_string())
}

/// Marks errors caused by how the tool was invoked.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn is_usage(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.downcast_ref::<UsageError>().is_some()
            || matches!(
                e.downcast_ref::<pads_core::config::ConfigError>(),
                Some(pads_core::config::ConfigError::Invalid { .. } | pads_core::config::ConfigError::Parse { .. })
            )
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_usage(&e) { 1 } else { 2 })
        }
    }
}
