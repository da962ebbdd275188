use std::path::PathBuf;

use thiserror::Error;

use crate::train::TrainReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller supplied arguments that violate an operation's preconditions.
    #[error("usage error: {0}")]
    Usage(String),

    /// Inputs are well-formed but leave the computation without a defined result,
    /// e.g. every combined logit is -inf.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("search space of {size} sequences exceeds the enumeration limit of {limit}")]
    Capacity { size: f64, limit: u64 },

    #[error(
        "infinite loss: target token {token} at position {position} has zero combined probability"
    )]
    InfiniteLoss { position: usize, token: u32 },

    #[error("training diverged at epoch {epoch} (non-finite loss); last finite state retained")]
    Diverged {
        epoch: usize,
        last: Box<TrainReport>,
    },

    #[error("finite differences produced non-finite values at coordinates {0:?}")]
    NonFiniteDifference(Vec<usize>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error("{0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    /// Whether this error stems from invalid invocation rather than a runtime failure.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Usage(_))
    }
}

impl From<crate::logspace::Violation> for Error {
    fn from(v: crate::logspace::Violation) -> Self {
        Error::Usage(v.to_string())
    }
}
