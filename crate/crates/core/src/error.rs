use thiserror::Error;

/// Error type shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input data: wrong table length, non-finite entries, bad JSON.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Mismatched dimensions between arguments.
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    /// A requested computation would exceed a hard size cap.
    #[error("size limit exceeded: {0}")]
    SizeLimit(String),

    /// A matrix failed a structural validation (Hermiticity, involution, ...).
    #[error("validation failed: {0}")]
    Validation(String),

    /// Degenerate input for which the requested quantity is undefined.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// An iterative routine failed to converge.
    #[error("did not converge: {0}")]
    NonConvergence(String),

    /// A precondition gate was not met (e.g. non-robust game in an
    /// experiment that requires a robust verdict).
    #[error("precondition not met: {0}")]
    Precondition(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
