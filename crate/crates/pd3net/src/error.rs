//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer geometry does not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// Requested allocation exceeds addressable size.
    #[error("size error: {0}")]
    Size(String),

    /// An argument is outside its documented domain.
    #[error("parameter error: {0}")]
    Param(String),

    /// An operation was called in the wrong order (e.g. backward before forward).
    #[error("state error: {0}")]
    State(String),

    /// Input data failed validation (range, emptiness, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// A computation produced NaN or infinity.
    #[error("numerical failure: {0}")]
    NonFinite(String),

    /// A file did not match its expected format.
    #[error("format error: {0}")]
    Format(String),

    /// A checkpoint was written by an incompatible version.
    #[error("version mismatch: found {found}, expected {expected}")]
    Version { found: u32, expected: u32 },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
