//! Error type shared by all modules.

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong when building or running a model.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A weighted mean was requested but the weights integrate to zero.
    #[error("zero mass: {0}")]
    ZeroMass(&'static str),

    /// Two fields that must share a grid do not.
    #[error("grid mismatch: {0}")]
    GridMismatch(&'static str),

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    /// A transition-matrix row does not sum to one within tolerance.
    #[error("transition row {row} is not stochastic (sum = {sum})")]
    RowNotStochastic { row: usize, sum: f64 },

    /// Malformed text input; positions are 1-based.
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    /// Explicit time step too large for the grid and velocities.
    #[error("CFL violation: dt = {dt} exceeds stable limit {limit}")]
    CflViolation { dt: f64, limit: f64 },

    /// A frequency estimate needs at least three sign changes.
    #[error("insufficient oscillation: {found} sign changes, need at least {required}")]
    InsufficientOscillation { found: usize, required: usize },

    /// Spatial velocity profiles must vanish on the domain boundary.
    #[error("profile must vanish at the domain boundary: |value({x})| = {value}")]
    ProfileBoundaryViolation { x: f64, value: f64 },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

impl Error {
    /// Short machine-readable code, used by the CLI error protocol.
    pub fn code(&self) -> &'static str {
        match self {
            Error::ZeroMass(_) => "zero-mass",
            Error::GridMismatch(_) => "grid-mismatch",
            Error::IndexOutOfRange { .. } => "index-out-of-range",
            Error::RowNotStochastic { .. } => "row-not-stochastic",
            Error::Parse { .. } => "parse",
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::CflViolation { .. } => "cfl",
            Error::InsufficientOscillation { .. } => "insufficient-oscillation",
            Error::ProfileBoundaryViolation { .. } => "profile-boundary",
            Error::InvalidParams(_) => "invalid-params",
        }
    }
}
