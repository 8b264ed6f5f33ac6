//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Image or matrix dimensions are incompatible with the requested operation.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A JPEG stream uses a feature outside the supported baseline subset.
    #[error("unsupported JPEG feature: {0}")]
    UnsupportedJpeg(String),

    /// A byte stream could not be parsed (truncation, bad magic, corrupt payload).
    #[error("parse error: {0}")]
    Parse(String),

    /// Patch selection produced an empty set.
    #[error("patch selection is empty: {0}")]
    EmptySelection(String),

    /// A sample covariance or PCA basis does not have the requested rank.
    #[error("rank deficiency: {0}")]
    RankDeficient(String),

    /// The requested payload exceeds what the cost map can carry.
    #[error("infeasible payload: {0}")]
    InfeasiblePayload(String),

    /// The developed batch collapsed to a near-constant image set.
    #[error("saturated development: {0}")]
    SaturatedDevelopment(String),

    /// A loss or gradient evaluation produced a non-finite value.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Detector feature schemas do not match.
    #[error("feature schema mismatch: expected {expected}, got {got}")]
    SchemaMismatch { expected: String, got: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }
}
