//! Crate-wide error type and result alias.

/// Errors surfaced by the library and mapped to CLI exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input violates a documented precondition (shape aside).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Numerical failure inside a kernel, e.g. a non-SPD pivot.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Dimension disagreement between operands.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Memory writes must carry strictly increasing frame indices.
    #[error("frame ordering: {0}")]
    FrameOrder(String),

    /// Malformed file content (PGM header, JSON schema).
    #[error("format error: {0}")]
    Format(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
