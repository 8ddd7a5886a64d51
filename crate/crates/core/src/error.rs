use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::{Float, TensorError};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("unknown config key `{0}`")]
    UnknownConfigKey(String),

    #[error("invalid config value for `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("data error{}{}: {reason}", line.map(|l| format!(" at line {l}")).unwrap_or_default(), id.as_ref().map(|i| format!(" (sample {i})")).unwrap_or_default())]
    Data {
        line: Option<usize>,
        id: Option<String>,
        reason: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint does not match the data or config: {0}")]
    Mismatch(String),

    #[error("non-finite loss at batch {batch}; largest parameter norms: {}", format_norms(.param_norms))]
    NonFiniteLoss {
        batch: usize,
        param_norms: Vec<(String, Float)>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn format_norms(norms: &[(String, Float)]) -> String {
    norms
        .iter()
        .map(|(n, v)| format!("{n}={v:.4e}"))
        .collect::<Vec<_>>()
        .join(", ")
}

impl Error {
    pub(crate) fn data(reason: impl Into<String>) -> Self {
        Error::Data {
            line: None,
            id: None,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
