//! File formats, module config files and the pyramid benchmark harness
//! built on `vortex-core`.

pub mod bench;
pub mod config;
pub mod fmap;
pub mod wbank;

pub use vortex_core;

use thiserror::Error;

/// Decoding and IO failures for FMAP and VPWB files.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("dtype code {0} is not 0 (f32) or 1 (f64)")]
    BadDType(u8),
    #[error("header padding bytes must be zero")]
    NonZeroPadding,
    #[error("zero dimension in {h}x{w}x{c}")]
    ZeroDimension { h: usize, w: usize, c: usize },
    #[error("truncated: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("dimension {0} does not fit the format")]
    DimensionTooLarge(usize),
    #[error("entry name of {0} bytes is too long")]
    NameTooLong(usize),
    #[error("entry name is not valid UTF-8")]
    BadName,
    #[error("duplicate entry `{0}`")]
    DuplicateEntry(String),
    #[error(transparent)]
    Invalid(#[from] vortex_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
