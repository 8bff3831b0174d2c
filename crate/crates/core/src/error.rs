use thiserror::Error;

/// Errors raised by the laboratory operations.
///
/// Variants mirror the failure modes of the theory: violated type invariants,
/// ties in Bayes labels, enumeration guards and geometric preconditions.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("argmax tie at input {input}: most likely label is not unique")]
    Tie { input: usize },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("zero row at index {0} cannot be normalized")]
    ZeroRow(usize),

    #[error("duplicate points at rows {0} and {1}")]
    DuplicatePoint(usize, usize),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("encoder is not sample optimal: {0}")]
    NotSampleOptimalEncoder(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("degenerate classes: {0}")]
    DegenerateClass(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Error {
    Error::Invalid {
        what,
        reason: reason.into(),
    }
}
