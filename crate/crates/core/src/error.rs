use thiserror::Error;

/// Errors raised by the library. Assumption violations found by
/// [`crate::model::validate_model`] are reported separately as a
/// [`crate::model::ValidationReport`]; this type covers structural faults.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: String,
        expected: String,
        got: String,
    },

    #[error("time index {k} out of range 0..={max}")]
    IndexOutOfRange { k: usize, max: usize },

    #[error("singular gain system R_k + B'S_(k+1)B at k={k}")]
    SingularGainSystem { k: usize },

    #[error("control history holds {history} inputs but age is {age}")]
    HistoryMismatch { history: usize, age: usize },

    #[error("noise window holds {window} samples, need at least {needed}")]
    InsufficientWindow { window: usize, needed: usize },

    #[error("queuing policy returned age {age} at k={k}, admissible range is 0..={max}")]
    InadmissibleAge { k: usize, age: usize, max: usize },

    #[error("noise covariance {0} has no Cholesky factor")]
    NotPositiveDefinite(&'static str),

    #[error("dp oracle state space of {states} entries exceeds cap {cap}")]
    StateSpaceTooLarge { states: u64, cap: u64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn dim_err(what: &str, expected: impl ToString, got: impl ToString) -> Error {
    Error::Dimension {
        what: what.to_string(),
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
