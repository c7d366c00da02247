use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents do not line up for the requested operation.
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// Invalid hyperparameter, configuration key or value.
    #[error("configuration error: {0}")]
    Config(String),

    /// A NaN or infinity appeared in the output of an operation.
    #[error("non-finite value produced by {op} at flat index {index}")]
    NonFinite { op: &'static str, index: usize },

    /// The selective scan recurrence diverged.
    #[error("non-finite selective scan state at step {step}, channel {channel}")]
    ScanDiverged { step: usize, channel: usize },

    /// Caller violated an API precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("parse error at byte offset {offset}: {reason}")]
    Parse { offset: usize, reason: String },

    #[error("training diverged at iteration {iteration} (batch dumped to {dump:?})")]
    Diverged { iteration: usize, dump: Option<PathBuf> },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for errors caused by numerical failure rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::ScanDiverged { .. } | Error::Diverged { .. }
        )
    }
}
