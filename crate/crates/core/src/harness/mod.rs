//! Experiment orchestration: configs, evaluation regimes, metrics files,
//! statistics and reports.

pub mod checkpoint;
pub mod config;
pub mod evaluate;
pub mod metrics;
pub mod report;
pub mod run;
pub mod stats;

use thiserror::Error;

use crate::envcore::EnvError;
use crate::learners::TrainError;
use crate::power::PowerError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("training diverged: {0}")]
    TrainingDiverged(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("checkpoint does not match the environment: {0}")]
    CheckpointMismatch(String),
    #[error("checkpoint cannot be scaled: {0}")]
    CheckpointNotScalable(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Power(#[from] PowerError),
}

impl HarnessError {
    /// Process exit code for the error's category.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::ConfigInvalid(_) => 2,
            HarnessError::TrainingDiverged(_) => 3,
            HarnessError::Io(_) => 4,
            HarnessError::CheckpointMismatch(_) | HarnessError::CheckpointNotScalable(_) => 2,
            HarnessError::Env(_) | HarnessError::Power(_) => 3,
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

impl From<TrainError> for HarnessError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Power(PowerError::InvalidConfig(m)) => HarnessError::ConfigInvalid(m),
            other => HarnessError::TrainingDiverged(other.to_string()),
        }
    }
}
