use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box ({x0}, {y0}, {x1}, {y1}): needs x1 > x0, y1 > y0 and finite corners")]
    InvalidBox { x0: f64, y0: f64, x1: f64, y1: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("box {0} is outside the map or not aligned to cells")]
    OutOfBounds(String),

    #[error("zero-area box")]
    ZeroArea,

    #[error("box too small to split at pyramid level {level} ({grid}x{grid} grid)")]
    PyramidTooSmall { level: usize, grid: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no stage-{stage} model for scale {scale}")]
    MissingModel { stage: u8, scale: usize },

    #[error("bad magic in tensor file {path:?}")]
    BadMagic { path: PathBuf },

    #[error("truncated tensor file {path:?}: {detail}")]
    Truncated { path: PathBuf, detail: String },

    #[error("malformed file {path:?}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("io error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable numeric code, used as the CLI exit status.
    pub fn code(&self) -> i32 {
        match self {
            Error::InvalidBox { .. } => 10,
            Error::NonFinite(_) => 11,
            Error::ShapeMismatch(_) => 12,
            Error::LengthMismatch { .. } => 13,
            Error::OutOfBounds(_) => 14,
            Error::ZeroArea => 15,
            Error::PyramidTooSmall { .. } => 16,
            Error::EmptyInput(_) => 17,
            Error::InvalidParameter(_) => 18,
            Error::MissingModel { .. } => 19,
            Error::BadMagic { .. } => 20,
            Error::Truncated { .. } => 21,
            Error::Format { .. } => 22,
            Error::Io { .. } => 23,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }
}
