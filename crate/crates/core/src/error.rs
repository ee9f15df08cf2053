use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("size error: {0}")]
    Size(String),

    #[error("arity error: {op} needs at least {min} inputs, got {got}")]
    Arity { op: &'static str, min: usize, got: usize },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("no input files in {dir} match `{pattern}`")]
    EmptyInput { dir: PathBuf, pattern: String },

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("crop error: window {size} does not fit in {height}x{width}")]
    Crop { size: usize, height: usize, width: usize },

    #[error("insufficient frames: need {needed}, have {available}")]
    InsufficientFrames { needed: usize, available: usize },

    #[error("index error: {0}")]
    Index(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Training { step: usize, loss: f64 },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::Shape { expected: expected.into(), actual: actual.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
