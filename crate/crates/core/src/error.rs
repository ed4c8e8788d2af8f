use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degree {degree} out of range for dimension {dim}")]
    DegreeOutOfRange { degree: usize, dim: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("input is not closed: |d f| = {residual:e}")]
    NotClosed { residual: f64 },

    #[error("conjugate gradient did not converge after {iterations} iterations (relative residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64, trace: Vec<f64> },

    #[error("ambiguous spectral gap: {0}")]
    AmbiguousGap(String),

    #[error("class is infeasible: cup square {total:e} exceeds threshold {threshold:e}")]
    Infeasible { total: f64, threshold: f64 },

    #[error("masked point: {0}")]
    Masked(String),

    #[error("rank deficiency: {0}")]
    RankDeficient(String),

    #[error("unresolvable radius {radius} (minimum {minimum})")]
    UnresolvableRadius { radius: f64, minimum: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Contract(msg.into()))
}
