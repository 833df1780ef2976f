use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
#[non_exhaustive]
pub enum Error {
    #[error("dimension error: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// The raw e-NTK gradient of a data row vanished, so it cannot be normalized.
    #[error("degenerate feature at row {row}: raw gradient norm {norm:e} below threshold")]
    DegenerateFeature { row: usize, norm: f64 },

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("privacy error: {0}")]
    Privacy(String),

    #[error("feature map fingerprint mismatch: expected {expected}, found {found}")]
    Fingerprint { expected: String, found: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
