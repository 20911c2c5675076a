use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(
        "no validation sample has confidence within the threshold {threshold} \
         (observed confidence range [{min_confidence:.4}, {max_confidence:.4}]); {hint}"
    )]
    EmptyConfidenceSet {
        threshold: f64,
        min_confidence: f64,
        max_confidence: f64,
        hint: &'static str,
    },

    #[error("training diverged at epoch {epoch} (last finite epoch: {last_finite_epoch:?}): {reason}")]
    Training {
        epoch: usize,
        last_finite_epoch: Option<usize>,
        reason: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable, machine-readable error class.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Io { .. } => "IoError",
            Error::Format(_) => "FormatError",
            Error::Data(_) => "DataError",
            Error::Config(_) => "ConfigError",
            Error::EmptyConfidenceSet { .. } => "EmptyConfidenceSet",
            Error::Training { .. } => "TrainingError",
        }
    }
}

macro_rules! data_err {
    ($($arg:tt)*) => { $crate::error::Error::Data(format!($($arg)*)) };
}

macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(format!($($arg)*)) };
}

pub(crate) use config_err;
pub(crate) use data_err;
