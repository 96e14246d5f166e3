//! Crate-wide error type.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("coder error: {0}")]
    Coder(String),

    #[error("bitstream error: {0}")]
    Bitstream(String),

    #[error("model hash mismatch: bitstream has {bitstream:016x}, checkpoint has {model:016x}")]
    HashMismatch { bitstream: u64, model: u64 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("non-finite loss at step {step}: {diagnostic}")]
    NonFinite { step: u64, diagnostic: String },

    #[error("empty ROI: mask selects no pixels")]
    EmptyRoi,

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {path}: {msg}")]
    ImageDecode { path: PathBuf, msg: String },

    #[error("{0}")]
    Other(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
