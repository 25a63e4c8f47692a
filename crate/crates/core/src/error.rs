use std::path::PathBuf;

use avhubert_neural::NeuralError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("lookup error: {0}")]
    Lookup(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("masking error: {0}")]
    Masking(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("loss error: {0}")]
    Loss(String),
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing artifacts: {0:?}")]
    Missing(Vec<PathBuf>),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}
