use std::path::PathBuf;

/// Crate-wide error type. Variants map onto the CLI exit codes:
/// configuration/argument problems exit 2, runtime numeric/shape/data
/// problems exit 3, filesystem problems exit 4.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error in `{field}`: {msg}")]
    Config { field: String, msg: String },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("i/o error at `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config { field: field.into(), msg: msg.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code for the CLI: 2 validation, 3 runtime, 4 i/o.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Invalid(_) => 2,
            Error::Shape(_) | Error::Numeric(_) | Error::Data(_) => 3,
            Error::Io { .. } => 4,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
