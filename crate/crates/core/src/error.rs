use std::path::PathBuf;

/// Errors raised across the harmonization pipeline.
///
/// Variants map onto process exit codes in the CLI (see [`Error::exit_code`]).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid argument to an operation (bad dimensions, mismatched depths, ...).
    #[error("invalid argument: {0}")]
    Argument(String),
    /// Inconsistent structure, e.g. volume slices with differing shapes.
    #[error("structural error: {0}")]
    Structural(String),
    /// The data cannot support the request (empty mask, missing class, too few samples).
    #[error("data error: {0}")]
    Data(String),
    /// Metric undefined on the given input (e.g. single-class AUC).
    #[error("metric error: {0}")]
    Metric(String),
    /// Configuration failed validation; `field` is a dotted path into the config.
    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Malformed file content (bad PGM header, bad JSON, ...).
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format { path: path.into(), message: message.into() }
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { field: field.into(), message: message.into() }
    }

    /// CLI exit code: 2 config, 3 data, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Argument(_) => 2,
            Error::Structural(_) | Error::Data(_) | Error::Metric(_) => 3,
            Error::Io { .. } | Error::Format { .. } => 4,
        }
    }
}
