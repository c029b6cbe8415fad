use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = LabError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("config: {field}: {message}")]
    Config { field: String, message: String },
    #[error("config: {0}")]
    ConfigParse(#[from] toml::de::Error),
    #[error("config: {0}")]
    ConfigWrite(#[from] toml::ser::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("metrics: {0}")]
    Csv(#[from] csv::Error),
    #[error("checkpoint {}: {message}", path.display())]
    Checkpoint { path: PathBuf, message: String },
    #[error("data: {0}")]
    Data(sfl_core::Error),
    #[error("engine: {0}")]
    Engine(sfl_core::Error),
    #[error("check failed: {0}")]
    CheckFailed(String),
}

impl LabError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        LabError::Config { field: field.into(), message: message.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io { path: path.into(), source }
    }

    /// Process exit status for this error family.
    pub fn exit_code(&self) -> u8 {
        match self {
            LabError::Config { .. } | LabError::ConfigParse(_) | LabError::ConfigWrite(_) => 2,
            LabError::Io { .. } | LabError::Csv(_) | LabError::Checkpoint { .. } => 3,
            LabError::Data(_) => 4,
            LabError::Engine(_) => 5,
            LabError::CheckFailed(_) => 6,
        }
    }
}

impl From<sfl_core::Error> for LabError {
    fn from(e: sfl_core::Error) -> Self {
        use sfl_core::Error as E;
        match e {
            E::Dataset(_)
            | E::IdxMagic { .. }
            | E::IdxTruncated { .. }
            | E::IdxCountMismatch { .. }
            | E::TooFewSamples { .. }
            | E::PartitionInfeasible { .. }
            | E::LabelOutOfRange { .. } => LabError::Data(e),
            other => LabError::Engine(other),
        }
    }
}
