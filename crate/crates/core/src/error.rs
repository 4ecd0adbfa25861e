use thiserror::Error;

/// Errors raised by the smoothing library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid block layout: {0}")]
    InvalidLayout(String),

    #[error("block {block}: expected {expected} entries, found {found}")]
    BlockLength {
        block: usize,
        expected: usize,
        found: usize,
    },

    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("function {block} has {found} observations; covariance estimation needs at least 2")]
    TooFewObservations { block: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("linear solve failed: {0}")]
    SolveFailed(String),

    #[error("size guard exceeded: {what} = {size} > {limit}")]
    SizeGuard {
        what: &'static str,
        size: usize,
        limit: usize,
    },

    #[error("could not parse `{input}`: {reason}")]
    Parse { input: String, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;
