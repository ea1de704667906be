use thiserror::Error;

pub type Result<T> = std::result::Result<T, CatError>;

#[derive(Debug, Error)]
pub enum CatError {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{what} index {index} out of range (size {size})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("source library is empty")]
    EmptyLibrary,

    #[error("source policy `{0}` has no successor-feature table")]
    MissingSuccessorFeatures(String),

    #[error(
        "{n_actions}^{n_states} deterministic policies exceed the enumeration limit {limit}; \
         use the Frank-Wolfe solver instead"
    )]
    EnumerationTooLarge {
        n_states: usize,
        n_actions: usize,
        limit: u64,
    },

    #[error("malformed artifact: {0}")]
    Format(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
