//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An input violated an operation's precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Matrix or parameter shapes do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Training produced a non-finite loss or parameter value.
    #[error("training diverged (non-finite value){}{}",
        .client.map(|c| format!(" at client {c}")).unwrap_or_default(),
        .round.map(|r| format!(" in round {r}")).unwrap_or_default())]
    Divergence {
        client: Option<usize>,
        round: Option<u64>,
    },

    /// A quality record referenced a client the ledger does not know.
    #[error("unknown client id {0}")]
    UnknownClient(usize),

    /// The partition spec cannot be satisfied; the message names the
    /// binding constraint.
    #[error("infeasible partition: {0}")]
    InfeasiblePartition(String),

    /// CSV ingestion failed; names the offending column and row when known.
    #[error("csv error in {path}: {message}")]
    Csv { path: String, message: String },

    /// Experiment configuration is malformed; names the offending key.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
