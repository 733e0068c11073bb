use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "bcnn", version, about = "Learned convolutional Gibbs prior for compressed-sensing restoration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CommandArgs,
}

#[derive(Debug, Subcommand)]
pub enum CommandArgs {
    /// Cut training patches from a directory of grayscale images.
    Extract(ExtractArgs),
    /// Train a prior by contrastive divergence.
    Train(TrainArgs),
    /// Draw images from a prior with the Gibbs sampler.
    Sample(SampleArgs),
    /// Simulate Gaussian measurements of images.
    Measure(MeasureArgs),
    /// Restore images from measurements with the posterior Gibbs sampler.
    Restore(RestoreArgs),
    /// Score restored images against references.
    Eval(EvalArgs),
    /// Response-histogram KL divergence between data and prior samples.
    Kld(KldArgs),
    /// Magnitude spectra of relu, arctan and the learned activations.
    Spectrum(SpectrumArgs),
    /// LASSO restoration by iterative soft thresholding.
    Baseline(BaselineArgs),
    /// Re-run a command from its manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverArg {
    Cholesky,
    Cg,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Root seed; every random stream is derived from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// TOML file with default values; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Patch side length.
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long, conflicts_with = "target")]
    pub stride: Option<usize>,
    /// Choose the stride whose patch count is closest to this.
    #[arg(long)]
    pub target: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SolverFlags {
    #[arg(long, value_enum)]
    pub solver: Option<SolverArg>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, conflicts_with = "model")]
    pub preset: Option<String>,
    /// Initial model file (instead of a preset).
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub cd_steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub persistent: bool,
    #[arg(long)]
    pub no_model_selection: bool,
    #[command(flatten)]
    pub solver: SolverFlags,
}

#[derive(Debug, Clone, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub count: Option<usize>,
    /// Image size as HxW.
    #[arg(long)]
    pub size: Option<String>,
    /// Gibbs sweeps per sample.
    #[arg(long)]
    pub iterations: Option<usize>,
    #[command(flatten)]
    pub solver: SolverFlags,
}

#[derive(Debug, Clone, Args)]
pub struct SensingFlags {
    /// Measurement ratios M/N (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub mr: Vec<f64>,
    /// Measurement SNRs in dB (comma separated); `none` is noiseless.
    #[arg(long, value_delimiter = ',')]
    pub snr_db: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct MeasureArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[command(flatten)]
    pub sensing: SensingFlags,
}

#[derive(Debug, Clone, Args)]
pub struct RestoreArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Ground-truth images to measure and restore.
    #[arg(long, conflicts_with = "measurements")]
    pub images: Option<PathBuf>,
    /// Directory of measurement records written by `measure`.
    #[arg(long)]
    pub measurements: Option<PathBuf>,
    /// References for scoring records restored from `--measurements`.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[command(flatten)]
    pub sensing: SensingFlags,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub last_sample: bool,
    #[arg(long)]
    pub random_init: bool,
    #[command(flatten)]
    pub solver: SolverFlags,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub restored: Option<PathBuf>,
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Method label for the report rows.
    #[arg(long)]
    pub method: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct KldArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Prior-chain sweeps from each data patch.
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub bins: Option<usize>,
    /// Use at most this many patches (evenly spaced through the dataset).
    #[arg(long)]
    pub max_patches: Option<usize>,
    #[command(flatten)]
    pub solver: SolverFlags,
}

#[derive(Debug, Clone, Args)]
pub struct SpectrumArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Model whose learned activations are included.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Half-width of the sampled interval.
    #[arg(long)]
    pub range: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, conflicts_with = "measurements")]
    pub images: Option<PathBuf>,
    #[arg(long)]
    pub measurements: Option<PathBuf>,
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[command(flatten)]
    pub sensing: SensingFlags,
    /// ISTA iterations.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// λ as a fraction of ‖Aᵀy‖∞.
    #[arg(long, conflicts_with = "oracle_lambda")]
    pub lambda_fraction: Option<f64>,
    /// Pick the best λ of the fixed grid by PSNR against the reference.
    #[arg(long)]
    pub oracle_lambda: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Write outputs here instead of the recorded directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
