use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Embedding-gather, fuzzy-verify entity resolution.
#[derive(Debug, Parser)]
#[command(name = "erlink", version)]
struct Cli {
    /// TOML pipeline configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for generation and index construction.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic corpus: refs.csv, queries.csv and truth.csv.
    Generate(GenerateArgs),
    /// Embed references and queries into the vector cache.
    Embed(InputArgs),
    /// Link queries to references by exhaustive embedding similarity.
    GroundTruth(GroundTruthArgs),
    /// Run the full pipeline and write decisions (and metrics with a truth file).
    Resolve(ResolveArgs),
    /// Recall@K of retrieval methods.
    EvalRetrieval(EvalArgs),
    /// Time retrieval methods against the brute-force baseline.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Reference records.
    #[arg(long)]
    m: Option<usize>,
    /// Linked queries.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    distractor_rate: Option<f64>,
    #[arg(long)]
    typo_rate: Option<f64>,
    #[arg(long)]
    field_drop_rate: Option<f64>,
    #[arg(long)]
    case_flip_rate: Option<f64>,
    #[arg(long)]
    swap_adjacent_rate: Option<f64>,
}

#[derive(Debug, Args)]
struct InputArgs {
    #[arg(long)]
    refs: Option<PathBuf>,
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long, value_enum)]
    embedder: Option<EmbedderArg>,
    #[arg(long)]
    dim: Option<usize>,
    /// Directory for cached embeddings.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EmbedderArg {
    HashNgram,
    Tfidf,
    Remote,
}

#[derive(Debug, Args)]
struct GroundTruthArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Debug, Args)]
struct ResolveArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum)]
    index: Option<IndexArg>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    accept_threshold: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum IndexArg {
    Flat,
    Rpforest,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Fuzzy,
    EmbeddingOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    BruteForce,
    Flat,
    Rpforest,
    Lexical,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Jsonl,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',', default_values = ["flat"])]
    methods: Vec<MethodArg>,
    #[arg(long, value_delimiter = ',', default_values = ["1", "5", "10", "20", "50"])]
    k_list: Vec<usize>,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[command(flatten)]
    eval: EvalArgs,
    /// Timed runs per method after one warm-up (at least 5).
    #[arg(long, default_value_t = 5)]
    repetitions: usize,
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
            eprintln!("erlink: {e:#}");
            ExitCode::from(2)
        }
    }
}
