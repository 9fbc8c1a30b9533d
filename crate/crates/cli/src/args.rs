use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use scenediff::backends::TaskMode;
use scenediff::Weighting;

#[derive(Debug, Parser)]
#[command(name = "scenediff", version)]
#[command(about = "Score semantic scene change at patrol spots from question/answer embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Answer the battery about a reference image and store the result for a spot
    InitReference(InitReferenceArgs),
    /// Compare a current image against a spot's stored reference
    Score(ScoreArgs),
    /// Print the QoQ of a question battery or a subset of it
    Qoq(QoqArgs),
    /// Run the random-subset variance experiment and write CSV output
    AnalyzeSubsets(AnalyzeArgs),
    /// Pick k questions from a pool by greedy QoQ maximization
    SelectBattery(SelectArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    /// Hash embedder and scripted answers from a scenario file
    Mock,
    /// JSON services at the configured endpoints
    Http,
}

/// Options shared by every subcommand that talks to a backend. Each one
/// overrides the matching config key.
#[derive(Debug, Clone, Default, Args)]
pub struct BackendArgs {
    /// TOML config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub backend: Option<Backend>,
    /// Reference store directory
    #[arg(long, env = "SCENEDIFF_STORE")]
    pub store_dir: Option<PathBuf>,
    #[arg(long, value_parser = parse_weighting)]
    pub weighting: Option<Weighting>,
    /// Concurrent backend requests per battery
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub parallelism: Option<u64>,
    /// Questions per backend request
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch_size: Option<u64>,
    /// Scripted answers for the mock backend (JSON)
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub embedder_endpoint: Option<String>,
    #[arg(long)]
    pub answerer_endpoint: Option<String>,
    /// Embedding dimension
    #[arg(long)]
    pub dimension: Option<usize>,
    /// Seed of the mock embedder
    #[arg(long)]
    pub embed_seed: Option<u64>,
    #[arg(long, value_parser = parse_task_mode)]
    pub task_mode: Option<TaskMode>,
    /// Bearer token for both services
    #[arg(long, env = "SCENEDIFF_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
    /// Per-request timeout
    #[arg(long)]
    pub timeout_secs: Option<f64>,
}

#[derive(Debug, Args)]
pub struct InitReferenceArgs {
    #[arg(long)]
    pub spot: String,
    #[arg(long)]
    pub image: PathBuf,
    /// Battery file; defaults to the config's `questions`
    #[arg(long)]
    pub questions: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub spot: String,
    #[arg(long)]
    pub image: PathBuf,
    /// Battery file; defaults to the config's `questions`
    #[arg(long)]
    pub questions: Option<PathBuf>,
    /// Flag the scene as changed when SD exceeds this
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct QoqArgs {
    #[arg(long)]
    pub questions: PathBuf,
    /// Zero-based question indices, comma separated
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub subset: Option<Vec<usize>>,
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Pool file. Lines may carry `question<TAB>reference answer<TAB>current answer`.
    #[arg(long)]
    pub pool: PathBuf,
    /// Questions per sampled set
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Number of sampled sets
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fixed QoQ bin width
    #[arg(long, conflicts_with = "bins")]
    pub bin_width: Option<f64>,
    /// Number of equal-width QoQ bins across the observed range
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Take reference answers from this spot's stored record
    #[arg(long, requires = "image")]
    pub spot: Option<String>,
    /// Current image whose answers are compared against the reference
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub backend: BackendArgs,
}

fn parse_weighting(s: &str) -> Result<Weighting, String> {
    s.parse()
}

fn parse_task_mode(s: &str) -> Result<TaskMode, String> {
    match s.to_ascii_uppercase().as_str() {
        "IC" => Ok(TaskMode::Ic),
        "VQA" => Ok(TaskMode::Vqa),
        _ => Err(format!("unknown task mode {s:?}, expected IC or VQA")),
    }
}

impl Command {
    pub fn json(&self) -> bool {
        match self {
            Command::InitReference(a) => a.json,
            Command::Score(a) => a.json,
            Command::Qoq(a) => a.json,
            Command::AnalyzeSubsets(a) => a.json,
            Command::SelectBattery(a) => a.json,
        }
    }
}
