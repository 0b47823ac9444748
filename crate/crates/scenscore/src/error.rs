//! Crate-wide error type.

/// Errors raised across the scoring pipeline, grouped by the stage that
/// produced them. The grouping mirrors the CLI exit codes: validation
/// errors exit 2, solver failures 3, data errors 4.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed or unusable input data (files, samples, matrices).
    #[error("data error: {0}")]
    Data(String),
    /// Invalid arguments or violated preconditions.
    #[error("invalid input: {0}")]
    Validation(String),
    /// A numerical routine failed or did not converge.
    #[error("solver failure: {0}")]
    Solver(String),
    /// Underlying I/O failure, annotated with the offending path.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    /// Prefixes the message with the pipeline stage that failed.
    pub fn with_stage(self, stage: &str) -> Self {
        match self {
            Error::Data(m) => Error::Data(format!("{stage}: {m}")),
            Error::Validation(m) => Error::Validation(format!("{stage}: {m}")),
            Error::Solver(m) => Error::Solver(format!("{stage}: {m}")),
            other => other,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn solver(msg: impl Into<String>) -> Self {
        Error::Solver(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
