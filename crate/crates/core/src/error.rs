use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("config: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("class {0} is absent from the training labels")]
    MissingClass(usize),

    #[error("{context}: {source}")]
    Probe {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("image {}: {msg}", path.display())]
    Image { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn in_context(self, context: impl Into<String>) -> Self {
        Error::Probe {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Process exit code: 2 for configuration, 4 for probe failures, 3 for
    /// everything else (input data).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::Probe { source, .. } if source.is_config() => 2,
            Error::Probe { source, .. } if source.is_data() => 3,
            Error::Probe { .. } => 4,
            _ => 3,
        }
    }

    fn is_config(&self) -> bool {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => true,
            Error::Probe { source, .. } => source.is_config(),
            _ => false,
        }
    }

    fn is_data(&self) -> bool {
        match self {
            Error::Parse { .. } | Error::Data(_) | Error::Image { .. } | Error::Io(_) => true,
            Error::Probe { source, .. } => source.is_data(),
            _ => false,
        }
    }

    /// True when the error was raised while training or scoring a probe.
    pub fn is_probe_failure(&self) -> bool {
        matches!(self, Error::Probe { .. })
    }
}
