use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter spec `{name}`: {reason}")]
    InvalidSpec { name: String, reason: String },

    #[error("invalid search space: {0}")]
    InvalidSpace(String),

    #[error("value {value} in dimension {dim} lies outside the unit interval")]
    OutsideUnitCube { dim: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid configuration: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("individual has no fitness at the compared budget")]
    MissingFitness,

    #[error("unknown job id {0}")]
    UnknownJob(u64),

    #[error("sequencing error: {0}")]
    Sequencing(String),

    #[error("objective failed: {0}")]
    Objective(String),

    #[error("lookup failed: {0}")]
    Lookup(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field,
            reason: reason.into(),
        }
    }
}

/// A run that stopped early, with everything recorded up to the failure.
#[derive(Debug, Error)]
#[error("run aborted after {} evaluations: {error}", trace.entries.len())]
pub struct RunFailure {
    #[source]
    pub error: Error,
    pub trace: crate::trace::RunTrace,
}
