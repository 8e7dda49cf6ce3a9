//! Data handling, splitting and the optimization loop for STL, MTL and GATE.

mod config;
mod data;
mod matrix;
mod split;
mod trainer;

pub use config::{Mode, RunConfig, TrainConfig};
pub use data::{fit_normalization, write_csv, Record, TaskDataset};
pub use matrix::{subset_summary, run_matrix, subset_config, SubsetRow, MatrixRun, MatrixSpec, RunSpec};
pub use split::{kfold_uniform, scaffold_keys, scaffold_split, split_by_keys, SplitPlan};
pub use trainer::{predict_graphs, split_plans, train, train_with_log, StepRecord, TrainOutcome, Trainer};

use thiserror::Error;

use crate::losses::LossError;
use crate::metrics::ReportError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("i/o: {0}")]
    Io(String),
    #[error("data: {0}")]
    Data(String),
    #[error("config: {0}")]
    Config(String),
    #[error("training diverged in {term} (fold {fold}, epoch {epoch}, step {step}): {detail}")]
    Diverged { term: String, fold: usize, epoch: usize, step: u64, detail: String },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Report(#[from] ReportError),
}
