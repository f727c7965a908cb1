use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },

    #[error("line {line}: non-numeric token {token:?}")]
    NonNumeric { line: usize, token: String },

    #[error("missing {0}")]
    MissingCamera(String),

    #[error("nonpositive depth {0}")]
    NonPositiveDepth(f64),

    #[error("box lies (partly) behind the camera")]
    BehindCamera,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("missing statistics: {0}")]
    MissingStats(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("raster: {0}")]
    Raster(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
