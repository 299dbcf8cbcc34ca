use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "htsp", version, about = "Hierarchical solver for large Euclidean TSP instances")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write uniform random instances (and optionally reference tours).
    Generate(GenerateArgs),
    /// Warm up and jointly train both policies.
    Train(TrainArgs),
    /// Solve instances with learned or heuristic levels.
    Solve(SolveArgs),
    /// Compare tours against reference tours.
    Eval(EvalArgs),
    /// Turn eval and metrics files into plot-ready CSV series.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FileFormat {
    Json,
    Tsplib,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, env = "HTSP_N")]
    pub n: usize,
    #[arg(long, default_value_t = 1, env = "HTSP_COUNT")]
    pub count: usize,
    #[arg(long, default_value_t = 0, env = "HTSP_SEED")]
    pub seed: u64,
    #[arg(long, env = "HTSP_OUT_DIR")]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = FileFormat::Json)]
    pub format: FileFormat,
    /// Also write `<id>.ref.tour` built by the local-search reference solver
    /// with this many perturbation rounds.
    #[arg(long)]
    pub reference_kicks: Option<usize>,
    #[arg(long, default_value_t = 1, env = "HTSP_WORKERS")]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML training config; defaults are used for missing keys.
    #[arg(long, env = "HTSP_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, env = "HTSP_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "HTSP_WORKERS")]
    pub workers: Option<usize>,
    #[arg(long, env = "HTSP_OUT_DIR")]
    pub out_dir: PathBuf,
    /// Resume from a training checkpoint (config is taken from it).
    #[arg(long, env = "HTSP_CHECKPOINT")]
    pub checkpoint: Option<PathBuf>,
    /// Start from the lower model of this checkpoint.
    #[arg(long)]
    pub init_lower: Option<PathBuf>,
    /// Stop after this many epochs (the run can be resumed).
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum UpperChoice {
    Learned,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LowerChoice {
    Learned,
    Farthest,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LowerMode {
    Greedy,
    Sample,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Instance files or directories.
    #[arg(long, required = true, num_args = 1..)]
    pub instances: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = UpperChoice::Learned, env = "HTSP_UPPER")]
    pub upper: UpperChoice,
    #[arg(long, value_enum, default_value_t = LowerChoice::Learned, env = "HTSP_LOWER")]
    pub lower: LowerChoice,
    #[arg(long, env = "HTSP_CHECKPOINT")]
    pub checkpoint: Option<PathBuf>,
    /// TOML config whose `[problem]` section sets k and sub-problem sizes
    /// (otherwise taken from the checkpoint, else defaults).
    #[arg(long, env = "HTSP_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, env = "HTSP_OUT_DIR")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0, env = "HTSP_SEED")]
    pub seed: u64,
    #[arg(long, default_value_t = 1, env = "HTSP_WORKERS")]
    pub workers: usize,
    /// Per-instance wall-clock budget in seconds; remaining sub-problems are
    /// then solved by farthest insertion. Also the external solver's limit.
    #[arg(long, env = "HTSP_TIME_LIMIT")]
    pub time_limit: Option<f64>,
    #[arg(long, value_enum, default_value_t = LowerMode::Greedy)]
    pub lower_mode: LowerMode,
    /// Sampled rollouts per sub-problem in sample mode (best one kept).
    #[arg(long, default_value_t = 8)]
    pub rollouts: usize,
    /// External solver argv template with `{input}`, `{output}` and
    /// `{time_limit}` placeholders, whitespace separated.
    #[arg(long, env = "HTSP_EXTERNAL_CMD")]
    pub external_cmd: Option<String>,
    #[arg(long, value_enum, default_value_t = FileFormat::Tsplib)]
    pub external_format: FileFormat,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub instances: Vec<PathBuf>,
    /// Directory with `<id>.tour` files (and optionally `solve.csv`).
    #[arg(long)]
    pub tours: PathBuf,
    /// Directory with `<id>.ref.tour` or `<id>.tour` reference tours.
    #[arg(long)]
    pub references: PathBuf,
    #[arg(long, env = "HTSP_OUT_DIR")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// `label=path/to/eval.csv` entries, one per solver configuration.
    #[arg(long = "eval", value_name = "LABEL=CSV")]
    pub evals: Vec<String>,
    /// `label=path/to/metrics.jsonl` training logs.
    #[arg(long = "metrics", value_name = "LABEL=JSONL")]
    pub metrics: Vec<String>,
    #[arg(long, env = "HTSP_OUT_DIR")]
    pub out_dir: PathBuf,
}
