use thiserror::Error;

/// Errors raised across the link-simulation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A bit or symbol stream does not have the length the framing requires.
    #[error("framing error: {0}")]
    Framing(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    /// Input is well-formed but carries no usable signal (zero power, empty grid).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("synchronization failed: {0}")]
    SyncFailure(String),

    /// Snapshot timestamps must increase per network.
    #[error("ordering error: {0}")]
    Ordering(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
