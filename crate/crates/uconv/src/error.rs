use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] uconv_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    /// A configuration file whose contents do not validate.
    #[error("{}: {source}", path.display())]
    Config {
        path: PathBuf,
        #[source]
        source: uconv_core::Error,
    },
    #[error("{}: {source}", path.display())]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    /// A file opened fine but its contents are not in the expected format.
    #[error("{}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },
    #[error("unsupported sample rate {0} Hz, expected 16000")]
    SampleRate(u32),
    #[error("vocabulary has {vocab} entries but the model emits {model}")]
    VocabMismatch { vocab: usize, model: usize },
    #[error("benchmark must run single-threaded, got {0} threads")]
    Threads(usize),
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Self::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Process exit status: 3 for file problems, 2 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Io { .. } | Self::Wav { .. } | Self::Format { .. } => 3,
            _ => 2,
        }
    }
}
