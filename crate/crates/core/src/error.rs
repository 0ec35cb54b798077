//! Error type shared by every module of the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A computation was asked to run over a mask with no usable pixels.
    #[error("empty domain: {0}")]
    EmptyDomain(&'static str),

    /// An input carried NaN or infinity where a finite value is required.
    #[error("non-finite input: {0}")]
    NonFiniteInput(&'static str),

    /// Two rasters or fields that must agree in shape do not.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    /// A pose was built from a matrix that is not a rotation.
    #[error("not a rotation matrix: {0}")]
    NotARotation(String),

    /// The operation needs a perspective camera but got an orthographic one.
    #[error("operation requires a perspective camera")]
    OrthographicUnsupported,

    /// Multi-view solve called with fewer views than it can couple.
    #[error("need at least {need} views, got {got}")]
    ViewCountTooSmall { need: usize, got: usize },

    /// A correspondence references a view or pixel that does not exist or
    /// lies outside the mask.
    #[error("match {index} out of bounds: {msg}")]
    MatchOutOfBounds { index: usize, msg: String },

    /// A correspondence list violates a structural rule (ordering,
    /// duplicates).
    #[error("invalid matches: {0}")]
    InvalidMatches(String),

    /// The lighting calibration system does not determine all coefficients.
    #[error("lighting system is rank deficient: rank {rank} of {need}")]
    RankDeficient { rank: usize, need: usize },

    /// Match generation could not find enough mutually visible pixels.
    #[error("only {found} of {requested} requested matches are visible")]
    NotEnoughVisiblePixels { requested: usize, found: usize },

    /// An option value is outside its valid range.
    #[error("invalid options: {0}")]
    InvalidOptions(String),

    /// A scene configuration is structurally invalid or references missing
    /// files.
    #[error("invalid scene config: {0}")]
    InvalidConfig(String),

    /// A text file failed to parse; carries the 1-based line number.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// An I/O failure, annotated with the path involved.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Convenience constructor for [`Error::Io`].
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Convenience constructor for [`Error::Parse`].
    pub fn parse(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
