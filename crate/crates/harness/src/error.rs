use lis_cnn::CnnError;
use lis_core::LisError;
use thiserror::Error;

use crate::config::ConfigError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("I/O failure: {0}")]
    Io(String),

    #[error("CSV does not match the expected schema: {0}")]
    SchemaMismatch(String),
}

impl HarnessError {
    /// Process exit code: 2 configuration, 3 numerical, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::SchemaMismatch(_) => 2,
            HarnessError::Numerical(_) => 3,
            HarnessError::Io(_) => 4,
        }
    }
}

impl From<LisError> for HarnessError {
    fn from(e: LisError) -> Self {
        match e {
            LisError::InvalidParameter(msg) => HarnessError::Config(ConfigError::Invalid(msg)),
            LisError::InvalidRho(_) | LisError::InsufficientPilots { .. } => HarnessError::Config(ConfigError::Invalid(e.to_string())),
            other => HarnessError::Numerical(other.to_string()),
        }
    }
}

impl From<CnnError> for HarnessError {
    fn from(e: CnnError) -> Self {
        match e {
            CnnError::Core(inner) => inner.into(),
            CnnError::Io(_)
            | CnnError::BadMagic(_)
            | CnnError::VersionMismatch { .. }
            | CnnError::TruncatedFile
            | CnnError::ChecksumMismatch { .. }
            | CnnError::Malformed(_) => HarnessError::Io(e.to_string()),
            CnnError::InvalidConfig(msg) => HarnessError::Config(ConfigError::Invalid(msg)),
            CnnError::OddAntennaCount(_) => HarnessError::Config(ConfigError::Invalid(e.to_string())),
            CnnError::ShapeMismatch(_) | CnnError::Diverged { .. } => HarnessError::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
