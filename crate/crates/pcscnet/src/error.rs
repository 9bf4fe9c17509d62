use std::io;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{0}")]
    Config(String),
    #[error("unknown raw label {raw} at point {index}")]
    UnknownLabel { raw: u16, index: usize },
    #[error("{0}")]
    Data(String),
    /// A check or acceptance condition evaluated to false.
    #[error("{0}")]
    CheckFailed(String),
    #[error(transparent)]
    Core(#[from] pcsc_core::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Stable short identifier used in the one-line error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::Config(_) => "config",
            Error::UnknownLabel { .. } => "label",
            Error::Data(_) => "data",
            Error::CheckFailed(_) => "check_failed",
            Error::Core(pcsc_core::Error::NonFiniteLoss(_)) => "non_finite",
            Error::Core(_) => "model",
        }
    }
}
