use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("source image `{id}` has no mask (looked for {path})")]
    MissingMask { id: String, path: PathBuf },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("loss term `{term}` is not finite ({value})")]
    NonFinite { term: &'static str, value: f64 },

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("kernel row {0} has zero norm")]
    ZeroKernel(usize),

    #[error("features are not unit-normalized (max norm deviation {0:.3e})")]
    NotNormalized(f64),

    #[error("empty split: {0}")]
    EmptySplit(String),

    #[error("unknown class id {class_id} (mask has {num_classes} foreground classes)")]
    UnknownClass { class_id: u8, num_classes: u8 },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
