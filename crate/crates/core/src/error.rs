use thiserror::Error;

/// Errors raised by the numerical routines in this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LisError {
    #[error("matrix is not Hermitian (max asymmetry {deviation:.3e}, tolerance {tolerance:.3e})")]
    NotHermitian { deviation: f64, tolerance: f64 },

    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue:.3e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("matrix is not positive definite (pivot {pivot:.3e} at index {index})")]
    NotPd { pivot: f64, index: usize },

    #[error("Jacobi eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:.3e}, condition estimate {condition:.3e})")]
    NoConvergence { sweeps: usize, off_norm: f64, condition: f64 },

    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch { expected: (usize, usize), got: (usize, usize) },

    #[error("matrix entries must be finite")]
    NonFinite,

    #[error("correlation coefficient {0} outside [0, 1)")]
    InvalidRho(f64),

    #[error("pilot length {pilots} is shorter than the {required} unknowns per antenna")]
    InsufficientPilots { pilots: usize, required: usize },

    #[error("normal matrix G^H G is singular")]
    SingularNormalMatrix,

    #[error("MM objective increased from {previous:.12e} to {current:.12e} at iteration {iteration}")]
    NonMonotone { iteration: usize, previous: f64, current: f64 },

    #[error("channel estimate is degenerate (beamformer normaliser {0:.3e})")]
    DegenerateEstimate(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, LisError>;
