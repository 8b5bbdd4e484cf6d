use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced by the analysis and construction routines.
///
/// [`Error::is_validation`] separates misuse (bad shapes, bad files, bad
/// arguments) from mathematical failure, which is what the CLI maps onto
/// its exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("degenerate hyperplane: normal vector has zero length")]
    DegenerateHyperplane,

    #[error("usage error: {0}")]
    Usage(String),

    #[error("diagonal block {block} is singular")]
    SingularBlock { block: usize },

    #[error("search budget exceeded: {0}")]
    Budget(String),

    #[error("construction failed: {0}")]
    Construction(String),

    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch { .. }
                | Error::InvalidNetwork(_)
                | Error::InvalidDataset(_)
                | Error::DegenerateHyperplane
                | Error::Usage(_)
                | Error::Parse(_)
        )
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
