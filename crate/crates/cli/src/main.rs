mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nmce::NmceError;

/// Manifold clustering and embedding with coding-rate objectives.
#[derive(Parser, Debug)]
#[command(name = "nmce", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset as CSV plus a metadata sidecar.
    GenData(GenDataArgs),
    /// Train an encoder from a run config.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a CSV dataset.
    Eval(EvalArgs),
    /// Export embeddings, cluster spectra and principal-component retrievals.
    Export(ExportArgs),
    /// Run gradient, identity and metric self-checks.
    Check(CheckArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// `double-spiral` or `random-mlp`.
    pub generator: String,
    /// Points per class.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "data.csv")]
    pub out: PathBuf,
    /// Take generator parameters from the `[data]` section of a run config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Comma-separated latent dimensions, one manifold each.
    #[arg(long, value_delimiter = ',')]
    pub latent_dims: Option<Vec<usize>>,
    #[arg(long)]
    pub ambient_dim: Option<usize>,
    /// Generator networks without biases (manifolds meet at the origin).
    #[arg(long)]
    pub no_bias: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Run config (TOML).
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Bundled config: double_spiral, synthetic_identifiable, ...
    #[arg(long)]
    pub preset: Option<String>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    /// Print progress every this many steps (0 for silence).
    #[arg(long, default_value_t = 100)]
    pub log_every: usize,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "eval")]
    pub out: PathBuf,
    /// Seed for z-sim pair sampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "export")]
    pub out: PathBuf,
    /// Principal components per cluster.
    #[arg(long, default_value_t = 10)]
    pub components: usize,
    /// Retrieved samples per component.
    #[arg(long, default_value_t = 8)]
    pub per_component: usize,
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Largest point count for exhaustive partition oracles.
    #[arg(long, default_value_t = 8)]
    pub max_partition_points: usize,
    /// Corrupt the log-determinant gradient (negative control).
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(NmceError),
    ChecksFailed(usize),
}

impl From<NmceError> for CliError {
    fn from(e: NmceError) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(NmceError::NumericalAbort { .. }) => 2,
            CliError::Core(_) => 1,
            CliError::ChecksFailed(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::ChecksFailed(n) => write!(f, "{n} check(s) failed"),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Export(a) => commands::export(&a),
        Command::Check(a) => commands::check(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
