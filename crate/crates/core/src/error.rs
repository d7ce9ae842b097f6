use std::path::PathBuf;

/// Errors raised anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("integration failed at t = {time}: non-finite state derivative")]
    Integration { time: f64 },

    #[error("degenerate state: {0}")]
    DegenerateState(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite {0}")]
    NonFinite(&'static str),

    #[error("episode {episode} failed: {source}")]
    Episode {
        episode: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("empty buffer")]
    EmptyBuffer,

    #[error("only {succeeded} of {requested} Monte Carlo rollouts succeeded")]
    InsufficientRollouts { succeeded: usize, requested: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
