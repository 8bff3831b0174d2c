use thiserror::Error;

/// Failures of a lab command, split by the exit code they map to.
#[derive(Debug, Error)]
pub enum LabError {
    /// Bad config, parameters or input files.
    #[error("invalid input: {0}")]
    Validation(String),

    #[error(transparent)]
    Runtime(#[from] issl_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// A rerun produced different bytes than its manifest records.
    #[error("rerun mismatch: {0}")]
    Mismatch(String),
}

impl LabError {
    pub fn validation(msg: impl Into<String>) -> Self {
        Self::Validation(msg.into())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Validation(_) => 2,
            Self::Runtime(_) | Self::Io(_) | Self::Mismatch(_) => 3,
        }
    }
}

pub type LabResult<T> = Result<T, LabError>;
