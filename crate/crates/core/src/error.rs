use thiserror::Error;

/// Errors raised by the inference and prediction routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid region: {0}")]
    InvalidRegion(String),

    #[error("location {index} at ({x}, {y}) lies outside the active region")]
    OutOfRegion { index: usize, x: f64, y: f64 },

    #[error("parameter out of domain: {0}")]
    ParamDomain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate matrix: {0}")]
    Degenerate(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("overflow: {0}")]
    Overflow(String),

    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// True for failures of the numerics (factorization, divergence, overflow).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_) | Error::Overflow(_) | Error::Degenerate(_))
    }

    /// True for malformed input data.
    pub fn is_data(&self) -> bool {
        matches!(
            self,
            Error::Schema { .. }
                | Error::OutOfRegion { .. }
                | Error::Dimension(_)
                | Error::InsufficientData(_)
                | Error::Json(_)
        )
    }
}
