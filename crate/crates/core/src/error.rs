use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("parameter `{0}` has no gradient")]
    MissingGradient(String),

    #[error("degenerate feature vector: row {0} has zero norm")]
    DegenerateFeature(usize),

    #[error("feature matrix contains a non-finite value at row {row}, column {col}")]
    NonFiniteFeature { row: usize, col: usize },

    #[error("invalid k = {k} for a graph with {n} nodes (need 1 <= k < n)")]
    InvalidK { k: usize, n: usize },

    #[error("node {node} out of range for a graph with {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("{}:{line}: {msg}", path.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "<input>".into()))]
    Parse {
        path: Option<PathBuf>,
        line: usize,
        msg: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite {term} loss at epoch {epoch}")]
    NonFiniteLoss { term: &'static str, epoch: usize },

    #[error("provider `{provider}` failed after {attempts} attempt(s): {cause}")]
    Provider {
        provider: String,
        attempts: usize,
        cause: String,
    },

    #[error("provider `{provider}` rejected credentials (HTTP {status})")]
    ProviderAuth { provider: String, status: u16 },

    #[error("provider `{0}` returned an empty completion")]
    ProviderEmpty(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn parse(path: Option<&std::path::Path>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.map(|p| p.to_path_buf()),
            line,
            msg: msg.into(),
        }
    }
}
