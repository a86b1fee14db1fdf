use std::path::PathBuf;

use thiserror::Error;

use crate::training::TrainHistory;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at node {node} ({op}): {detail}")]
    ShapeMismatch {
        node: usize,
        op: &'static str,
        detail: String,
    },

    #[error("non-finite value produced at node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },

    #[error("unbound graph input `{0}`")]
    UnboundInput(String),

    #[error("missing parameter `{0}`")]
    MissingParameter(String),

    #[error("backward called before a completed forward pass")]
    BackwardBeforeForward,

    #[error("loss node {node} is not scalar (shape {shape:?})")]
    NonScalarLoss { node: usize, shape: Vec<usize> },

    #[error("gradient for `{0}` contains NaN")]
    NanGradient(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("single-class input: AUROC needs at least one positive and one negative")]
    SingleClass,

    #[error("zero variance in x; trendline is undefined")]
    ZeroVariance,

    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Diverged {
        epoch: usize,
        history: Box<TrainHistory>,
    },

    #[error("missing corpus for cell `{0}`")]
    MissingCorpus(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
