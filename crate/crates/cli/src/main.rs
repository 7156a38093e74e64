mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Failure classes, each with its own exit status.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Provider(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Provider(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Provider(m) => m,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "lexbridge", version, about = "Sparse retrieval with vocabulary enrichment")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Index a JSON-lines corpus.
    Build(BuildArgs),
    /// Register provider-proposed phrases in an index.
    Enrich(EnrichArgs),
    /// Run queries against an index.
    Search(SearchArgs),
    /// Score a results file against qrels.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct ProviderArgs {
    /// Stub provider script (JSON object keyed by subject id).
    #[arg(long, value_name = "FILE", conflicts_with = "endpoint")]
    pub stub: Option<PathBuf>,
    /// Chat-completions endpoint URL. The bearer token is read from the
    /// environment variable named by `token_env` in the config file.
    #[arg(long, value_name = "URL")]
    pub endpoint: Option<String>,
    #[arg(long, requires = "endpoint")]
    pub model: Option<String>,
    /// Directory of prompt templates laid out as `<task>/<kind>.txt`.
    #[arg(long, value_name = "DIR")]
    pub prompts: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<String>,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long, value_name = "FILE")]
    pub corpus: PathBuf,
    #[arg(long, short, value_name = "FILE")]
    pub output: PathBuf,
    #[arg(long)]
    pub slot_count: Option<u32>,
    #[arg(long)]
    pub min_ngram: Option<usize>,
    #[arg(long)]
    pub max_ngram: Option<usize>,
    /// One stopword per line, replacing the built-in list.
    #[arg(long, value_name = "FILE")]
    pub stopwords: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EnrichArgs {
    #[arg(long, value_name = "FILE")]
    pub index: PathBuf,
    #[arg(long, short, value_name = "FILE")]
    pub output: PathBuf,
    /// Per-document JSON-lines report; printed to stdout when absent.
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
    /// DF ceiling as a fraction of the corpus.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub max_phrases: Option<usize>,
    /// Concurrent provider requests (0 = all cores).
    #[arg(long)]
    pub workers: Option<usize>,
    #[command(flatten)]
    pub provider: ProviderArgs,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long, value_name = "FILE")]
    pub index: PathBuf,
    /// A single query.
    #[arg(long, conflicts_with = "queries")]
    pub query: Option<String>,
    #[arg(long, default_value = "query", requires = "query")]
    pub query_id: String,
    /// JSON-lines queries `{"_id", "text"}`.
    #[arg(long, value_name = "FILE", required_unless_present = "query")]
    pub queries: Option<PathBuf>,
    /// Results destination; stdout when absent.
    #[arg(long, short, value_name = "FILE")]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub weight: Option<f64>,
    #[arg(long, short)]
    pub k: Option<usize>,
    /// Candidates judged when reranking.
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long, overrides_with = "no_expand")]
    pub expand: bool,
    #[arg(long)]
    pub no_expand: bool,
    #[arg(long, overrides_with = "no_rerank")]
    pub rerank: bool,
    #[arg(long)]
    pub no_rerank: bool,
    /// DF ceiling for expansion phrases.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub max_phrases: Option<usize>,
    #[arg(long)]
    pub k1: Option<f64>,
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Separate stub script for relevance judgements.
    #[arg(long, value_name = "FILE")]
    pub judge_stub: Option<PathBuf>,
    /// JSON-lines log of rerank judgements.
    #[arg(long, value_name = "FILE")]
    pub audit: Option<PathBuf>,
    /// JSON-lines log of query expansions and filter verdicts.
    #[arg(long, value_name = "FILE")]
    pub expansions: Option<PathBuf>,
    #[command(flatten)]
    pub provider: ProviderArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    pub results: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub qrels: PathBuf,
    /// JSON-lines gold answers `{"_id", "answers"}`; needs --index.
    #[arg(long, value_name = "FILE", requires = "index")]
    pub answers: Option<PathBuf>,
    /// Index supplying document text for answer coverage.
    #[arg(long, value_name = "FILE")]
    pub index: Option<PathBuf>,
    /// Cutoffs, comma separated.
    #[arg(long, short, value_delimiter = ',')]
    pub k: Vec<usize>,
    #[arg(long, value_parser = ["linear", "exponential"])]
    pub gain: Option<String>,
    /// JSON report destination; printed to stdout before the table when absent.
    #[arg(long, short, value_name = "FILE")]
    pub output: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = config::Config::load(cli.config.as_deref()).and_then(|config| match cli.command {
        Command::Build(args) => commands::build(&args, config),
        Command::Enrich(args) => commands::enrich(&args, config),
        Command::Search(args) => commands::search(&args, config),
        Command::Eval(args) => commands::eval(&args, config),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
