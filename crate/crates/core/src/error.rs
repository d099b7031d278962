use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A point or image coordinate outside the region where the projection is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// A value that violates a type invariant (degenerate box, bad length, ...).
    #[error("invalid input: {0}")]
    Validation(String),

    /// A statistical fit that cannot be computed from the given data.
    #[error("fit error: {0}")]
    Fit(String),

    /// Parameters that are individually valid but inconsistent with each other.
    #[error("configuration error: {0}")]
    Config(String),

    /// NaN or infinite values produced during optimization.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: line {line}: {message}")]
    Parse {
        context: String,
        line: usize,
        message: String,
    },

    #[error("unsupported version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("checksum mismatch: stored {stored}, computed {computed}")]
    Checksum { stored: String, computed: String },

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
}
