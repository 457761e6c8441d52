//! Error taxonomy shared by every module.
//!
//! The CLI maps these onto process exit codes: contract/dimension/degenerate
//! errors are usage-level failures (exit 1), IO and format errors are
//! environment failures (exit 2).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or grid shapes do not line up.
    #[error("dimension error: {0}")]
    Dim(String),

    /// A precondition of an operation was violated.
    #[error("contract error: {0}")]
    Contract(String),

    /// A loss was requested over an empty mask.
    #[error("degenerate loss: no positions carry loss")]
    DegenerateLoss,

    /// Forward pass produced NaN or Inf.
    #[error("non-finite value produced by op `{0}`")]
    NonFinite(&'static str),

    /// Caption or config text could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),

    /// A character outside the fixed alphabet.
    #[error("tokenization error: character {0:?} not in alphabet")]
    Tokenize(char),

    /// Malformed checkpoint or corpus file; offset is the first bad byte.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dim(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
