//! Process-level error type carrying the stable exit-code contract:
//! 0 success, 2 configuration, 3 I/O, 4 data or model inconsistency.

use std::path::{Path, PathBuf};

use hiertail_core::dataset::DatasetError;
use hiertail_core::hierarchy::HierarchyError;
use hiertail_core::loss::LossError;
use hiertail_core::metrics::MetricsError;
use hiertail_core::synth::SynthError;
use hiertail_core::train::TrainError;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flag, bad config key, infeasible hyperparameters. Exit 2.
    #[error("config: {0}")]
    Config(String),
    /// Filesystem failure on a concrete path. Exit 3.
    #[error("i/o: {path}: {message}")]
    Io { path: PathBuf, message: String },
    /// Malformed or mutually inconsistent data artifacts. Exit 4.
    #[error("data: {0}")]
    Data(String),
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self::Config(message.into())
    }

    pub fn io(path: impl AsRef<Path>, err: impl std::fmt::Display) -> Self {
        Self::Io {
            path: path.as_ref().to_path_buf(),
            message: err.to_string(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::Data(message.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Io { .. } => 3,
            Self::Data(_) => 4,
        }
    }
}

impl From<HierarchyError> for CliError {
    fn from(e: HierarchyError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<LossError> for CliError {
    fn from(e: LossError) -> Self {
        match e {
            LossError::NonPositiveTau { .. } | LossError::ConflictingFlags => {
                Self::Config(e.to_string())
            }
            other => Self::Data(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::BadConfig { .. } => Self::Config(e.to_string()),
            other => Self::Data(other.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::InfeasibleConfig { .. } => Self::Config(e.to_string()),
            other => Self::Data(other.to_string()),
        }
    }
}
