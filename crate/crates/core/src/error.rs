use thiserror::Error;

use crate::linalg::Point;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("empty sequence")]
    EmptySequence,

    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A trajectory produced a non-finite state. `partial` holds every state up
    /// to and including index `last_finite`.
    #[error("numeric blow-up after index {last_finite}")]
    BlowUp {
        last_finite: usize,
        partial: Vec<Point>,
    },

    #[error("point {index} leaves the bounding box of half-width {half_width}")]
    OutsideBox { index: usize, half_width: f64 },

    #[error("missing constant: {0}")]
    MissingConstant(&'static str),
}
