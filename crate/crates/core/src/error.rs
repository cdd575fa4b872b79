use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("malformed image file: {0}")]
    Format(String),

    #[error("unsupported image: {0}")]
    Unsupported(String),

    #[error("image dimensions {width}x{height} overflow")]
    DimensionOverflow { width: u64, height: u64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("weight file truncated")]
    Truncated,

    #[error("weight file has bad magic bytes")]
    BadMagic,

    #[error("unsupported weight file version {0}")]
    BadVersion(u32),

    #[error("weight file checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    BadChecksum { stored: u32, computed: u32 },

    #[error("weight file layout does not match the network: {0}")]
    Layout(String),

    #[error("dataset error: {0}")]
    Dataset(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
