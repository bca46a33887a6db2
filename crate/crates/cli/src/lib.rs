//! Staged experiment runner: `phantom -> acquire -> recon -> train -> infer ->
//! eval -> report`. Each stage reads its upstream stage directories under the
//! run directory, writes its own, and records provenance so unchanged stages
//! are skipped on rerun.

pub mod config;
pub mod provenance;
pub mod report;
pub mod stages;

use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use vrmsi_core::learn::{LearnError, TrainMode};
use vrmsi_core::pipeline::PipelineError;
use vrmsi_core::recon::ReconError;
use vrmsi_core::sampling::SamplingError;

pub use config::{load_settings, Overrides, Settings};
pub use stages::{execute, StageStatus};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Phantom,
    Acquire,
    Recon,
    Train,
    Infer,
    Eval,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Phantom,
        Stage::Acquire,
        Stage::Recon,
        Stage::Train,
        Stage::Infer,
        Stage::Eval,
        Stage::Report,
    ];

    pub fn dir(self) -> &'static str {
        match self {
            Stage::Phantom => "phantom",
            Stage::Acquire => "acquire",
            Stage::Recon => "recon",
            Stage::Train => "train",
            Stage::Infer => "infer",
            Stage::Eval => "eval",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir())
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing dependency: stage `{stage}` has not been run ({} not found)", path.display())]
    Missing { stage: Stage, path: PathBuf },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("output directory {} is not empty; pass --force to overwrite", .0.display())]
    OutputExists(PathBuf),
    #[error("mixed provenance: {0}; pass --allow-mixed to evaluate anyway")]
    MixedProvenance(String),
    #[error("{0}")]
    Other(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 0 success, 2 config error, 3 missing dependency, 4 numerical failure,
    /// 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Missing { .. } => 3,
            CliError::Numerical(_) => 4,
            _ => 1,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        let msg = e.to_string();
        match e {
            PipelineError::Config(_)
            | PipelineError::Sampling(SamplingError::InvalidParams(_))
            | PipelineError::Learn(LearnError::Config(_)) => CliError::Config(msg),
            PipelineError::Learn(LearnError::NonFinite(_)) | PipelineError::Recon(ReconError::Linalg(_)) => {
                CliError::Numerical(msg)
            }
            _ => CliError::Other(msg),
        }
    }
}

macro_rules! via_pipeline {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                PipelineError::from(e).into()
            }
        }
    )*};
}

via_pipeline!(
    LearnError,
    ReconError,
    SamplingError,
    vrmsi_core::metrics::MetricsError,
    vrmsi_core::tensor::TensorError,
    vrmsi_core::phantom::PhantomError
);

impl From<vrmsi_core::tensor::ContainerError> for CliError {
    fn from(e: vrmsi_core::tensor::ContainerError) -> Self {
        CliError::Other(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Sj,
    Mj,
}

impl From<ModeArg> for TrainMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Sj => TrainMode::Sj,
            ModeArg::Mj => TrainMode::Mj,
        }
    }
}

/// Variable-resolution multi-spectral MRI experiments.
///
/// Flags override values from the config file, which override the built-in
/// desk-scale defaults.
#[derive(Debug, Parser)]
#[command(name = "vrmsi", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML experiment config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for per-slice work (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Rerun stages even when their inputs are unchanged, replacing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    /// Run directory holding one subdirectory per stage.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Single-joint or multi-joint training data.
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,
    /// Let `eval` combine artifacts produced under different phantom configs.
    #[arg(long, global = true)]
    pub allow_mixed: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate synthetic subjects and write their slice manifests.
    Phantom,
    /// Simulate multi-coil spectral-bin k-space and the sampling plan.
    Acquire,
    /// Conventional reconstructions: REFERENCE, CR_VR and CR_ZREPLACE.
    Recon,
    /// Train the DL_VR and DL_ZREPLACE networks on the training subjects.
    Train,
    /// Run both networks on the test subjects.
    Infer,
    /// Score all five methods on the test subjects.
    Eval,
    /// Box plots and a summary table from an evaluation CSV.
    Report {
        /// Evaluation CSV (default: eval/report.csv in the run directory).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Every stage in order.
    Run,
    /// Print the resolved config as TOML.
    ShowConfig,
}

impl Cli {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            mode: self.mode.map(Into::into),
            out: self.out.clone(),
        }
    }
}
