use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("unsupported format version: expected {expected}, found {found}")]
    VersionMismatch { expected: String, found: String },

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("out of bounds: {0}")]
    OutOfBounds(String),

    #[error("resolution mismatch: map {map}, input {input}")]
    ResolutionMismatch { map: f64, input: f64 },

    #[error("duplicate sampler seed {0}")]
    DuplicateSeed(u64),

    #[error("unknown scenario '{0}'")]
    UnknownScenario(String),

    #[error("no traversable vertex: {0}")]
    NoTraversableStart(String),

    #[error("unreachable vertex {0}")]
    Unreachable(usize),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable code, used by the CLI for its one-line error report.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MalformedHeader(_) => "malformed_header",
            Error::VersionMismatch { .. } => "version_mismatch",
            Error::Truncated { .. } => "truncated",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::OutOfBounds(_) => "out_of_bounds",
            Error::ResolutionMismatch { .. } => "resolution_mismatch",
            Error::DuplicateSeed(_) => "duplicate_seed",
            Error::UnknownScenario(_) => "unknown_scenario",
            Error::NoTraversableStart(_) => "no_traversable_start",
            Error::Unreachable(_) => "unreachable",
            Error::Numerical(_) => "numerical",
            Error::Config(_) => "config",
        }
    }
}
