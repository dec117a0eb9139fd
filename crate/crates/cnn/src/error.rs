use thiserror::Error;

use lis_core::LisError;

#[derive(Debug, Error)]
pub enum CnnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("FFDNet needs an even antenna count, got M = {0}")]
    OddAntennaCount(usize),
    #[error("bad magic bytes in {0} file")]
    BadMagic(&'static str),
    #[error("unsupported file version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("file ends before the declared payload")]
    TruncatedFile,
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("malformed file: {0}")]
    Malformed(String),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Core(#[from] LisError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CnnError>;
