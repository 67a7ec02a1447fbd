use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolchain.
///
/// [`Error::is_validation`] separates input/config problems from runtime
/// failures; the CLI maps the two groups onto distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("manifest line {line}: {message}")]
    ManifestLine { line: usize, message: String },

    #[error("unsupported manifest schema_version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("nothing to extract: {0}")]
    ExtractionEmpty(String),

    #[error("object too small: rescaled height {height} px is below the {min} px minimum")]
    ObjectTooSmall { height: i64, min: i64 },

    #[error("placement out of frame: {0}")]
    PlacementOutOfFrame(String),

    #[error("backend `{backend}` failed: {message}")]
    Backend { backend: String, message: String },

    #[error("plugin error: {0}")]
    Plugin(String),

    #[error("flow decode error: {0}")]
    FlowDecode(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("image error for {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("I/O error for {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input data or configuration rather than
    /// a failure while doing the work.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch(_)
                | Error::InvalidParameter(_)
                | Error::Validation(_)
                | Error::Config(_)
                | Error::ManifestLine { .. }
                | Error::SchemaVersion { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
