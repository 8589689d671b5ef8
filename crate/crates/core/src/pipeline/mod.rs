//! End-to-end stages: data preparation, the three training stages, evaluation,
//! the ablation suite and the command-line front end.
//!
//! A run directory holds `vae.ckpt`, `classifier.ckpt`, `denoiser.ckpt`,
//! one `<stage>_loss.csv` per stage, `config.kv` and the evaluation reports.

mod ablation;
pub mod cli;
mod config;
mod eval;
mod schedule;
mod train;

use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::autodiff::{CheckpointError, TensorError};
use crate::classifier::ClassifierError;
use crate::dataset::DatasetError;
use crate::denoiser::DenoiserError;
use crate::diffusion::DiffusionError;
use crate::kv::KvError;
use crate::metrics::MetricsError;
use crate::vae::VaeError;

pub use ablation::{run_ablation, AblationReport, AblationRow, Variant, VARIANTS};
pub use config::{Flags, RunConfig, StageConfig, PRESETS};
pub use eval::{evaluate, evaluate_models, load_models, EvalOutput, Models};
pub use schedule::LrSchedule;
pub use train::{prepare_data, run_stage, DataSource, LossRecord, Prepared, Stage, StageSummary};

pub const VAE_CKPT: &str = "vae.ckpt";
pub const CLASSIFIER_CKPT: &str = "classifier.ckpt";
pub const DENOISER_CKPT: &str = "denoiser.ckpt";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const CONFIG_SNAPSHOT: &str = "config.kv";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("missing prerequisite: {0}")]
    Prerequisite(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint does not match the config: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Denoiser(#[from] DenoiserError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error("non-finite {stage} loss at step {step}")]
    NonFinite { stage: Stage, step: usize },
    #[error("frozen VAE parameters changed during diffusion training")]
    FreezeViolation,
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("evaluation invariant violated: {0}")]
    Invariant(String),
}

impl From<KvError> for PipelineError {
    fn from(e: KvError) -> Self {
        PipelineError::Config(e.to_string())
    }
}

pub mod exit_code {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const CONFIG: i32 = 3;
    pub const IO: i32 = 4;
    pub const DATA: i32 = 5;
    pub const PREREQUISITE: i32 = 6;
    pub const CHECKPOINT: i32 = 7;
    pub const TRAINING: i32 = 8;
    pub const FREEZE: i32 = 9;
    pub const EVALUATION: i32 = 10;
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        use PipelineError::*;
        match self {
            Config(_) => exit_code::CONFIG,
            Io { .. } => exit_code::IO,
            Dataset(_) => exit_code::DATA,
            Prerequisite(_) => exit_code::PREREQUISITE,
            Checkpoint(_)
            | Mismatch(_)
            | Vae(VaeError::Checkpoint(_))
            | Classifier(ClassifierError::Checkpoint(_))
            | Denoiser(DenoiserError::Checkpoint(_))
            | Diffusion(DiffusionError::Checkpoint(_)) => exit_code::CHECKPOINT,
            Tensor(_) | Vae(_) | Classifier(_) | Denoiser(_) | Diffusion(_) | NonFinite { .. } => exit_code::TRAINING,
            FreezeViolation => exit_code::FREEZE,
            Metrics(_) | Invariant(_) => exit_code::EVALUATION,
        }
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<(), PipelineError> {
    crate::autodiff::write_atomic(path, text.as_bytes()).map_err(io_err(path))
}

/// Reads a checkpoint that an earlier stage must have produced.
pub(crate) fn read_required(dir: &Path, name: &str, stage: &str) -> Result<crate::autodiff::Checkpoint, PipelineError> {
    let path = dir.join(name);
    if !path.is_file() {
        return Err(PipelineError::Prerequisite(format!(
            "{} not found; run `train --stage {stage}` first",
            path.display()
        )));
    }
    Ok(crate::autodiff::Checkpoint::read(&path)?)
}
