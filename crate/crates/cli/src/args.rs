use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "gsdm", version, about = "Spectral score-based diffusion for graph generation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Config file of `key=value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for every random stream (per-section `*.seed` keys override it).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; also the default location of inputs.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (falls back to GSDM_THREADS).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Config overrides, `key=value`.
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Spectral,
    Fullrank,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolverArg {
    Pc,
    Splitting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Steps,
    Schedule,
    Alpha,
    Eigdist,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset and its train/test split.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train a score network.
    Train {
        #[command(flatten)]
        common: Common,
        /// Model family (default spectral).
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Generate graphs from a trained checkpoint.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Reverse diffusion steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Fraction of eigenvalues (largest magnitude) that are diffused.
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, value_enum)]
        solver: Option<SolverArg>,
        /// Expected checkpoint variant; a mismatch is an error.
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        /// Graphs to generate (default: size of the test split).
        #[arg(long)]
        count: Option<usize>,
    },
    /// MMD evaluation of generated graphs against the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Generated graphs (default: <out>/generated.jsonl).
        #[arg(long)]
        generated: Option<PathBuf>,
        /// Reference graphs (default: <out>/test.jsonl).
        #[arg(long)]
        test: Option<PathBuf>,
        /// Method label written to the metrics table.
        #[arg(long)]
        method: Option<String>,
    },
    /// Sweep one axis and tabulate the metrics.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Train a model for every configuration instead of reusing a checkpoint.
        #[arg(long)]
        train_inline: bool,
    },
    /// Run the oracle suite.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Replace min(s, t) by s·t in the covariance kernel under test.
        #[arg(long, hide = true)]
        inject_kernel_bug: bool,
    },
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Self::GenData { common }
            | Self::Train { common, .. }
            | Self::Sample { common, .. }
            | Self::Eval { common, .. }
            | Self::Ablate { common, .. }
            | Self::Verify { common, .. } => common,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::GenData { .. } => "gen-data",
            Self::Train { .. } => "train",
            Self::Sample { .. } => "sample",
            Self::Eval { .. } => "eval",
            Self::Ablate { .. } => "ablate",
            Self::Verify { .. } => "verify",
        }
    }
}

impl VariantArg {
    pub fn key(self) -> &'static str {
        match self {
            Self::Spectral => "spectral",
            Self::Fullrank => "fullrank",
        }
    }
}
