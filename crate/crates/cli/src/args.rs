use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ntkspectra::alignment::{DEFAULT_EXCLUDE_TOP_K, DEFAULT_FLOOR};
use ntkspectra::dataio::{PairGroup, DEFAULT_NEAR_DUPLICATE_ANGLE};

#[derive(Debug, Parser)]
#[command(name = "ntkspectra", version, about = "NTK spectra, alignment and convergence-bound experiments")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Seed for every random draw; required by commands that sample.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Encoding of matrix, spectrum and check outputs.
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Csv)]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelKind {
    Analytic,
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    Labels,
    Residual,
}

/// `COUNT@ANGLE`, e.g. `40@1e-3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairArg(pub PairGroup);

impl FromStr for PairArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (count, angle) = s.split_once('@').ok_or_else(|| format!("expected COUNT@ANGLE, got {s:?}"))?;
        let count = count.trim().parse().map_err(|e| format!("pair count {count:?}: {e}"))?;
        let angle = angle.trim().parse().map_err(|e| format!("pair angle {angle:?}: {e}"))?;
        Ok(PairArg(PairGroup { count, angle }))
    }
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Dataset CSV (`feature_0,…,label`).
    #[arg(long)]
    pub data: PathBuf,
    /// Rescale rows onto the unit sphere after loading.
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Debug, Clone, Args)]
pub struct KernelArgs {
    #[arg(long, value_enum, default_value_t = KernelKind::Analytic)]
    pub kernel: KernelKind,
    /// Number of hidden layers.
    #[arg(long, default_value_t = 3)]
    pub depth: usize,
    /// Hidden width for the empirical kernel.
    #[arg(long, default_value_t = 1024)]
    pub width: usize,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[arg(long, default_value_t = DEFAULT_EXCLUDE_TOP_K)]
    pub exclude_top_k: usize,
    #[arg(long, default_value_t = DEFAULT_FLOOR)]
    pub floor: f64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset on the unit sphere.
    GenData {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        /// Near-duplicate pairs as COUNT@ANGLE (radians); repeatable.
        #[arg(long = "pairs")]
        pairs: Vec<PairArg>,
        /// Label frequency k in y = cos(k w·x).
        #[arg(long, default_value_t = 3.0)]
        frequency: f64,
        #[arg(long, default_value = "dataset")]
        name: String,
    },
    /// Check unit norms, parallel pairs and the label Lipschitz constant.
    CheckData {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = DEFAULT_NEAR_DUPLICATE_ANGLE)]
        threshold: f64,
    },
    /// Write the kernel matrix.
    Ntk {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        kernel: KernelArgs,
    },
    /// Eigendecompose the kernel and write spectrum and alignment profiles.
    Spectrum {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        kernel: KernelArgs,
        #[command(flatten)]
        fit: FitArgs,
        /// Also write the eigenvectors (one column per rank).
        #[arg(long)]
        save_vectors: bool,
    },
    /// Alignment profile averaged over random batches.
    Align {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        kernel: KernelArgs,
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long, value_enum, default_value_t = TargetArg::Labels)]
        target: TargetArg,
        #[arg(long)]
        batch_size: usize,
        #[arg(long, default_value_t = 1)]
        num_batches: usize,
        /// Networks to average over, seeded seed, seed+1, …
        #[arg(long, default_value_t = 1)]
        num_networks: usize,
    },
    /// Train by gradient descent and compare with the trace band.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 3)]
        depth: usize,
        #[arg(long, default_value_t = 2048)]
        width: usize,
        /// Step size; defaults to eta-scale / λ_max(K₀).
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long, default_value_t = 0.5)]
        eta_scale: f64,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        /// Band slack as a fraction of the initial loss.
        #[arg(long, default_value_t = 0.05)]
        slack_fraction: f64,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Bound curves from a stored spectrum.
    Bounds {
        /// Eigenvalue CSV written by `spectrum`.
        #[arg(long)]
        spectrum: PathBuf,
        #[arg(long)]
        eta: f64,
        #[arg(long)]
        c: f64,
        #[arg(long, default_value_t = 0.0)]
        delta: f64,
        #[arg(long, default_value_t = 0.0)]
        slack: f64,
        /// Initial loss; defaults to c·tr K / 2.
        #[arg(long)]
        l0: Option<f64>,
        #[arg(long, default_value_t = 200)]
        steps: usize,
    },
    /// Closed-form analysis of two unit inputs at angle θ.
    TwoPoint {
        #[arg(long)]
        theta: f64,
        #[arg(long, default_value_t = 3)]
        depth: usize,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        y1: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        y2: f64,
        #[arg(long, default_value_t = 1.0)]
        lipschitz: f64,
    },
    /// Merge earlier artifacts into one experiment report.
    Report {
        /// Directory holding the artifacts; defaults to --out-dir.
        #[arg(long)]
        artifacts: Option<PathBuf>,
        /// Target loss for the iteration-count estimate.
        #[arg(long, default_value_t = 1e-2)]
        target_epsilon: f64,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
    },
}
