use thiserror::Error;

/// Failures reported by an oracle while answering a loss query.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("query budget exhausted after {used} queries")]
    BudgetExhausted { used: u64 },
    #[error("input has dimension {got}, oracle expects {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("malformed request: {0}")]
    Malformed(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("non-finite loss at queried point")]
    NonFinite,
}

impl OracleError {
    pub fn is_budget_exhausted(&self) -> bool {
        matches!(self, OracleError::BudgetExhausted { .. })
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension {0}: must be at least 1")]
    InvalidDimension(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("vector entries must be finite")]
    NonFinite,
    #[error("degenerate projection: sampled direction is parallel to the prior")]
    DegenerateSample,
    #[error("degenerate gradient: estimated gradient norm is zero")]
    DegenerateGradient,
    #[error("estimate aborted after {spent} queries: {source}")]
    PartialEstimate {
        spent: u64,
        #[source]
        source: OracleError,
    },
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// The oracle failure behind this error, if any.
    pub fn oracle_error(&self) -> Option<&OracleError> {
        match self {
            Error::Oracle(e) | Error::PartialEstimate { source: e, .. } => Some(e),
            _ => None,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
