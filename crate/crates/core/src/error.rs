use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the simulator, the learning pipeline and the run harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate formation geometry: {0}")]
    DegenerateGeometry(&'static str),

    #[error("inertia tensor is not symmetric positive definite")]
    InvalidInertia,

    #[error("non-uniform sampling at index {index}: expected t = {expected}, got {actual}")]
    NonUniformSampling {
        index: usize,
        expected: f64,
        actual: f64,
    },

    #[error("series grids do not match: {0}")]
    GridMismatch(String),

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("training diverged at iteration {iteration}: final loss {loss}")]
    TrainingDiverged { iteration: usize, loss: f64 },

    #[error("empty series")]
    EmptySeries,

    #[error("series too short for spectral estimate: need {needed}, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error("verification failed: {}", .0.join("; "))]
    VerificationFailed(Vec<String>),

    #[error("malformed model file: {0}")]
    ModelFormat(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DegenerateGeometry(_) => "degenerate_geometry",
            Error::InvalidInertia => "invalid_inertia",
            Error::NonUniformSampling { .. } => "non_uniform_sampling",
            Error::GridMismatch(_) => "grid_mismatch",
            Error::InsufficientData { .. } => "insufficient_data",
            Error::TrainingDiverged { .. } => "training_diverged",
            Error::EmptySeries => "empty_series",
            Error::TooShort { .. } => "too_short",
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::VerificationFailed(_) => "verification_failed",
            Error::ModelFormat(_) => "model_format",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
