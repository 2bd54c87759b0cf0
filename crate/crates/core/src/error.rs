//! Error types shared across the engine.

use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

/// Engine-level failure. Every variant carries enough context to name the
/// offending operation and dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Tensor extents do not line up (inner-dim mismatch, wrong rank, ...).
    Shape { op: &'static str, detail: String },
    /// A spatial geometry precondition failed (kernel larger than input,
    /// zero-extent image, target smaller than source, ...).
    Geometry { op: &'static str, detail: String },
    /// An API contract was violated (non-scalar backward root, labels not
    /// one-hot, ...).
    Contract { op: &'static str, detail: String },
    /// A model or run configuration is invalid.
    Config { detail: String },
    /// A serialized blob does not match its declared format.
    Format { detail: String },
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub fn geometry(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Geometry { op, detail: detail.into() }
    }

    pub fn contract(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Contract { op, detail: detail.into() }
    }

    pub fn config(detail: impl Into<String>) -> Self {
        Error::Config { detail: detail.into() }
    }

    pub fn format(detail: impl Into<String>) -> Self {
        Error::Format { detail: detail.into() }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, detail } => write!(f, "shape error in {op}: {detail}"),
            Error::Geometry { op, detail } => write!(f, "geometry error in {op}: {detail}"),
            Error::Contract { op, detail } => write!(f, "contract violation in {op}: {detail}"),
            Error::Config { detail } => write!(f, "config error: {detail}"),
            Error::Format { detail } => write!(f, "format error: {detail}"),
        }
    }
}

impl core::error::Error for Error {}
