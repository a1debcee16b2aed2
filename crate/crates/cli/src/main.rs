//! `hyperclone`: initialize, clone, verify, analyze and train transformers.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage error, 3 I/O or
//! checkpoint error, 4 training divergence.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hyperclone_core::cloning::Strategy;
use hyperclone_core::tensor::DType;
use hyperclone_core::Error;

#[derive(Parser, Debug)]
#[command(name = "hyperclone", version, about = "Function-preserving width expansion of decoder-only transformers")]
#[command(after_help = "Set HCLN_THREADS to cap the number of worker threads.")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Write a randomly initialized checkpoint.
    Init(InitArgs),
    /// Expand a checkpoint into a wider clone with a receipt.
    Clone(CloneArgs),
    /// Check that a clone reproduces its source.
    Verify(VerifyArgs),
    /// Symmetry or spectrum metrics of a stored checkpoint.
    Analyze(AnalyzeArgs),
    /// Train a checkpoint (or a random init) on a byte-level corpus.
    Train(TrainArgs),
    /// Held-out loss of a checkpoint.
    Eval(EvalArgs),
    /// Run every combination of an ablation spec.
    Sweep(SweepArgs),
    /// List model and training presets.
    Presets,
}

#[derive(Args, Debug)]
pub struct InitArgs {
    /// Model preset (see `presets`).
    #[arg(long, default_value = "micro-lm", conflicts_with = "config")]
    pub preset: String,
    /// JSON model config instead of a preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "f64")]
    pub precision: DType,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Symmetric,
    Diagonal,
    #[value(alias = "noisy_symmetric")]
    NoisySymmetric,
    #[value(alias = "noisy_diagonal")]
    NoisyDiagonal,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Symmetric => Strategy::Symmetric,
            StrategyArg::Diagonal => Strategy::Diagonal,
            StrategyArg::NoisySymmetric => Strategy::NoisySymmetric,
            StrategyArg::NoisyDiagonal => Strategy::NoisyDiagonal,
        }
    }
}

#[derive(Args, Debug)]
pub struct CloneArgs {
    /// Source checkpoint.
    pub input: PathBuf,
    /// Hidden-size fold n_e.
    #[arg(long, default_value_t = 2)]
    pub embed_fold: usize,
    /// FFN fold n_f [default: embed fold].
    #[arg(long)]
    pub ffn_fold: Option<usize>,
    /// Head-count fold h [default: embed fold / head-dim fold].
    #[arg(long)]
    pub head_count_fold: Option<usize>,
    /// Head-width fold k [default: embed fold / head-count fold, else 1].
    #[arg(long)]
    pub head_dim_fold: Option<usize>,
    #[arg(long, value_enum, default_value = "symmetric")]
    pub strategy: StrategyArg,
    /// Noise level of the noisy strategies, in dB.
    #[arg(long, default_value_t = 10.0)]
    pub snr_db: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    pub source: PathBuf,
    /// Clone checkpoint; must carry a receipt.
    pub dest: PathBuf,
    /// Number of random sequences.
    #[arg(long, default_value_t = 32)]
    pub batches: usize,
    /// Sequence length [default: min(64, max_seq)].
    #[arg(long)]
    pub seq_len: Option<usize>,
    /// Max absolute diff [default: 1e-10 for f64, 1e-4 for f32].
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long, default_value = "f64")]
    pub precision: DType,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the JSON report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Symmetry,
    Spectrum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    pub checkpoint: PathBuf,
    /// Comma-separated tensor names; `*` matches one name segment.
    /// [default: FFN up-projections and the untied unembedding]
    #[arg(long)]
    pub tensors: Option<String>,
    #[arg(long, value_enum)]
    pub metric: Metric,
    /// Relative zero threshold for spectra.
    #[arg(long, default_value_t = 1e-6)]
    pub threshold: f64,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    /// Write here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InitKind {
    Checkpoint,
    Random,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Starting checkpoint (required with `--init checkpoint`).
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "checkpoint")]
    pub init: InitKind,
    /// Model preset for `--init random`.
    #[arg(long, default_value = "micro-lm")]
    pub preset: String,
    /// Seed of the random initialization.
    #[arg(long, default_value_t = 0)]
    pub init_seed: u64,
    /// Precision for `--init random`.
    #[arg(long, default_value = "f64")]
    pub precision: DType,
    /// Byte-level training text [default: bundled corpus].
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Training preset providing the defaults.
    #[arg(long, default_value = "desk")]
    pub train_preset: String,
    /// JSON file overriding training-config fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub decay_end: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub context_len: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Data-order and dropout seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub eval_interval: Option<usize>,
    #[arg(long)]
    pub track_interval: Option<usize>,
    /// Save a checkpoint every N steps (0 disables).
    #[arg(long, default_value_t = 0)]
    pub checkpoint_interval: usize,
    /// Continue from the checkpoint's optimizer state if present.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub track_symmetry: bool,
    #[arg(long)]
    pub track_spectrum: bool,
    /// Tensors to track (same syntax as `analyze --tensors`).
    #[arg(long)]
    pub tensors: Option<String>,
    #[arg(long, default_value_t = 1e-6)]
    pub spectrum_threshold: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub context_len: usize,
    /// Number of held-out windows.
    #[arg(long, default_value_t = 32)]
    pub windows: usize,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// JSON sweep spec.
    pub spec: PathBuf,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Failure with its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Contract(_) | Error::StrategyInapplicable { .. } => 2,
            Error::Io { .. } | Error::Checkpoint(_) | Error::Json(_) => 3,
            Error::Divergence { .. } => 4,
            Error::Convergence { .. } => 1,
        };
        Self { code, message: e.to_string() }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("HCLN_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::usage(format!("HCLN_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Failure::usage(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| commands::run(cli.command));
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
