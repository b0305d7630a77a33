use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = EunnError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum EunnError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid rotation plan: {0}")]
    InvalidPlan(String),

    #[error("unsupported dimension {n}: {reason}")]
    UnsupportedDimension { n: usize, reason: &'static str },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("training diverged at iteration {iter}: {detail}")]
    Diverged { iter: usize, detail: String },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("ingestion error in {path} at byte offset {offset}: {msg}")]
    Ingest {
        path: PathBuf,
        offset: u64,
        msg: String,
    },

    #[error("invariant check failed: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl EunnError {
    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            EunnError::Diverged { .. } => 2,
            EunnError::Invariant(_) => 3,
            _ => 1,
        }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        EunnError::Dimension(msg.into())
    }
}

pub(crate) fn check_len(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(EunnError::dim(format!(
            "{what}: expected length {expected}, got {got}"
        )));
    }
    Ok(())
}
