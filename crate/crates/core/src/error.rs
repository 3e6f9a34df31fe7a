use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("evaluation point within {distance:e} of star {star}")]
    Singularity { star: usize, distance: f64 },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("unsupported region: {0}")]
    UnsupportedRegion(String),
    #[error("quadrature did not reach tolerance {tolerance:e} (last change {achieved:e})")]
    Accuracy { tolerance: f64, achieved: f64 },
    #[error("unresolved: {0}")]
    Unresolved(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
