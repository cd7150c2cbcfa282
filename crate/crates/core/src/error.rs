use std::path::PathBuf;

use dccycle_autograd::GraphError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid architecture: {0}")]
    Spec(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("value {value} at index {index} lies outside {range}")]
    Range {
        value: f64,
        index: usize,
        range: &'static str,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("missing paired ground truth for ids: {}", .0.join(", "))]
    MissingPairs(Vec<String>),
    #[error("non-finite loss at step {step}: {breakdown}")]
    NonFinite { step: u64, breakdown: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", .path.display())]
    Decode { path: PathBuf, message: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("plot: {0}")]
    Plot(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
