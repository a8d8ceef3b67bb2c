//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by tensor, loss, training, data, and metric code.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or ranks of two operands are incompatible.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// An extent was zero or otherwise unusable for construction.
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    /// A numeric precondition was violated (non-finite input, probability
    /// outside [0,1], ...).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A moment centroid was requested for a zero-mass tensor.
    #[error("degenerate mass: m00 is zero")]
    DegenerateMass,

    /// A class label is outside the valid channel range.
    #[error("label error: {0}")]
    Label(String),

    /// A configuration value is inconsistent or out of range.
    #[error("config error: {0}")]
    Config(String),

    /// Training produced a non-finite loss.
    #[error("divergence at iteration {iteration}: loss is not finite")]
    Divergence { iteration: usize },

    /// A surface distance was requested for an empty surface.
    #[error("undefined distance: {0}")]
    UndefinedDistance(String),

    /// A file did not start with the expected magic bytes.
    #[error("format error: bad magic in {0}")]
    BadMagic(String),

    /// A file declares a format version this build does not understand.
    #[error("format error: unsupported version {version} in {path}")]
    UnsupportedVersion { path: String, version: u32 },

    /// A file is structurally broken (truncated, malformed header, ...).
    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: String, reason: String },

    /// On-disk contents disagree with the manifest that describes them.
    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
