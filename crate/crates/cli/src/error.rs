use thiserror::Error;

use gate_core::losses::LossError;
use gate_core::metrics::ReportError;
use gate_core::model::ModelError;
use gate_core::synth::SynthError;
use gate_core::training::TrainError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Io(_) => CliError::Io(e.to_string()),
            ModelError::Config(_) => CliError::Config(e.to_string()),
            ModelError::Diff(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<LossError> for CliError {
    fn from(e: LossError) -> Self {
        match e {
            LossError::Model(m) => m.into(),
            LossError::Weights(_) => CliError::Config(e.to_string()),
            LossError::Shape(_) => CliError::Data(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Io(_) => CliError::Io(e.to_string()),
            TrainError::Config(_) => CliError::Config(e.to_string()),
            TrainError::Data(_) => CliError::Data(e.to_string()),
            TrainError::Diverged { .. } => CliError::Numerical(e.to_string()),
            TrainError::Loss(l) => l.into(),
            TrainError::Model(m) => m.into(),
            TrainError::Report(r) => r.into(),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Spec(_) => CliError::Config(e.to_string()),
            SynthError::Io { .. } => CliError::Io(e.to_string()),
            SynthError::Write(t) => t.into(),
            SynthError::Generator { .. } => CliError::Data(e.to_string()),
        }
    }
}
