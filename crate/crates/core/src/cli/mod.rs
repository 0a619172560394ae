//! Command-line entry point. Each command reads an optional TOML config,
//! applies flag overrides, writes the resolved config beside its outputs and
//! exits 0 (ok), 1 (domain error) or 2 (usage error).

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::NdmError;

pub use config::CONFIG_FILE;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Domain(NdmError),
}

impl From<NdmError> for CliError {
    fn from(e: NdmError) -> Self {
        CliError::Domain(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Domain(e) => write!(f, "error: {e}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Domain(_) => 1,
        }
    }
}

pub type CliResult<T = ()> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "ndm", version, about = "Neighbor distance minimization toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct RunDir {
    /// Output directory; receives the resolved config and all outputs.
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite a directory that already holds a run.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a toy superposition model and dump its hidden activations.
    ToyTrain(ToyTrainArgs),
    /// Learn a subspace partition from an activation file.
    NdmTrain(NdmTrainArgs),
    /// Pairwise mutual information between the subspaces of a partition.
    Mi(MiArgs),
    /// Gini coefficients for recorded patching effects.
    EvalGini(EvalGiniArgs),
    /// Identity, random and PCA partitions with a given dimension configuration.
    Baselines(BaselinesArgs),
    /// Patch each subspace of a toy model's hidden state against a group readout.
    PatchToy(PatchToyArgs),
    /// Cosine-similarity preimages of one activation inside one subspace.
    Preimage(PreimageArgs),
}

#[derive(Debug, Args)]
pub struct ToyTrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// toy-2x20, toy-4group, toy-2x80 or toy-12x3.
    #[arg(long)]
    pub preset: Option<String>,
    /// Comma-separated group sizes, e.g. 20,20.
    #[arg(long, value_delimiter = ',')]
    pub groups: Option<Vec<usize>>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub sparsity: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Rows of hidden activations written to activations.ndma.
    #[arg(long)]
    pub dump_rows: Option<usize>,
    #[command(flatten)]
    pub run: RunDir,
}

#[derive(Debug, Args)]
pub struct NdmTrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// toy or lm.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub activations: Option<PathBuf>,
    /// identity, random, or a partition file whose R seeds the run.
    #[arg(long)]
    pub init: Option<String>,
    /// Restart passes over the activations when they run out.
    #[arg(long)]
    pub recycle: Option<bool>,
    /// Toy model file; when given, block purity is reported.
    #[arg(long)]
    pub toy_model: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub unit_size: Option<usize>,
    #[arg(long)]
    pub search_number: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub merge_threshold: Option<f64>,
    #[arg(long)]
    pub merge_interval: Option<usize>,
    #[arg(long)]
    pub merge_start_delay: Option<usize>,
    #[command(flatten)]
    pub run: RunDir,
}

#[derive(Debug, Args)]
pub struct MiArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub partition: Option<PathBuf>,
    #[arg(long)]
    pub activations: Option<PathBuf>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub run: RunDir,
}

#[derive(Debug, Args)]
pub struct EvalGiniArgs {
    /// JSON lines with keys test, effects, dims, variances.
    #[arg(long)]
    pub effects: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct BaselinesArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Partition whose dimension configuration the baselines copy.
    #[arg(long)]
    pub partition: Option<PathBuf>,
    #[arg(long)]
    pub activations: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub run: RunDir,
}

#[derive(Debug, Args)]
pub struct PatchToyArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub partition: Option<PathBuf>,
    /// Feature group read out and switched off in the counterfactual.
    #[arg(long)]
    pub group: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub run: RunDir,
}

#[derive(Debug, Args)]
pub struct PreimageArgs {
    #[arg(long)]
    pub partition: PathBuf,
    /// Activation file with a .meta sidecar.
    #[arg(long)]
    pub activations: PathBuf,
    #[arg(long)]
    pub subspace: usize,
    /// Use this stored row as the query.
    #[arg(long, conflicts_with = "query")]
    pub row: Option<usize>,
    /// Comma-separated query vector in the subspace coordinates.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub query: Option<Vec<f64>>,
    #[arg(long, default_value_t = crate::preimage::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value_t = 20)]
    pub top_k: usize,
    /// Print hits as JSON lines instead of rendered contexts.
    #[arg(long)]
    pub json: bool,
}

fn configure_threads() -> CliResult {
    if let Ok(v) = std::env::var("NDM_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| CliError::Usage(format!("NDM_THREADS must be a positive integer, got {v:?}")))?;
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn execute(cli: Cli) -> CliResult {
    configure_threads()?;
    match cli.command {
        Command::ToyTrain(a) => commands::toy_train(a),
        Command::NdmTrain(a) => commands::ndm_train(a),
        Command::Mi(a) => commands::mi(a),
        Command::EvalGini(a) => commands::eval_gini(a),
        Command::Baselines(a) => commands::baselines(a),
        Command::PatchToy(a) => commands::patch_toy(a),
        Command::Preimage(a) => commands::preimage(a),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
