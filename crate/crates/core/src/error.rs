//! Error type shared across the toolkit.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid physical geometry (source outside sphere, electrode off surface, ...).
    #[error("geometry error: {0}")]
    Geometry(String),

    /// Argument outside its documented domain.
    #[error("validation error: {0}")]
    Validation(String),

    /// Matrix/tensor dimension mismatch.
    #[error("shape error: {0}")]
    Shape(String),

    /// Malformed tensor container or sidecar file.
    #[error("format error: {0}")]
    Format(String),

    /// Atlas construction failure (empty or overlapping regions).
    #[error("atlas error: {0}")]
    Atlas(String),

    /// Nonpositive resolution diagonal during standardization.
    #[error("degenerate resolution at source {source_index}: diagonal {value}")]
    Degeneracy { source_index: usize, value: f64 },

    /// Non-finite value produced where finite math was required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A pipeline stage input that should exist on disk does not.
    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    /// Pipeline configuration failed schema validation.
    #[error("config error: {0}")]
    Schema(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit status for the CLI: 2 missing artifact, 3 schema/validation,
    /// 4 numeric failure, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::MissingArtifact(_) => 2,
            Error::Schema(_)
            | Error::Format(_)
            | Error::Validation(_)
            | Error::Shape(_)
            | Error::Geometry(_)
            | Error::Atlas(_) => 3,
            Error::Numeric(_) | Error::Degeneracy { .. } => 4,
            Error::Io(_) => 1,
        }
    }

    /// Stable machine-readable tag used in the CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Geometry(_) => "geometry",
            Error::Validation(_) => "validation",
            Error::Shape(_) => "shape",
            Error::Format(_) => "format",
            Error::Atlas(_) => "atlas",
            Error::Degeneracy { .. } => "degeneracy",
            Error::Numeric(_) => "numeric",
            Error::MissingArtifact(_) => "missing_artifact",
            Error::Schema(_) => "schema",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
