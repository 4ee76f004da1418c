//! Error types shared across the crate.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// Incompatible tensor/operator shapes; the message names both sides.
    Shape(String),
    /// A computation produced NaN or infinity.
    NonFinite(String),
    /// Invalid configuration value.
    Config(String),
    /// Calibration failure: degenerate ACS, underdetermined fit, bad geometry.
    Calibration(String),
    /// Undersampled acquisition contains no samples at all.
    EmptyAcquisition,
    /// Array container violation; each variant is a distinct error code.
    Format(FormatError),
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape mismatch: {msg}"),
            Error::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Calibration(msg) => write!(f, "calibration failed: {msg}"),
            Error::EmptyAcquisition => write!(f, "empty acquisition: k-space is all zero"),
            Error::Format(e) => write!(f, "array file: {e}"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<FormatError> for Error {
    fn from(e: FormatError) -> Self {
        Error::Format(e)
    }
}

/// Array container error codes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FormatError {
    BadMagic,
    UnsupportedVersion(u8),
    UnknownDtype(u8),
    /// Header declared more payload bytes than the file holds.
    Truncated { expected: u64, got: u64 },
    /// Extent product overflows or disagrees with the payload length.
    BadExtents(String),
}

impl fmt::Display for FormatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FormatError::BadMagic => write!(f, "bad magic"),
            FormatError::UnsupportedVersion(v) => write!(f, "unsupported version {v}"),
            FormatError::UnknownDtype(d) => write!(f, "unknown dtype code {d}"),
            FormatError::Truncated { expected, got } => {
                write!(f, "truncated payload: expected {expected} bytes, got {got}")
            }
            FormatError::BadExtents(msg) => write!(f, "bad extents: {msg}"),
        }
    }
}
