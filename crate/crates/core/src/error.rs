//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("non-finite entry {value} at ({row}, {col})")]
    NonFinite { row: usize, col: usize, value: f64 },

    #[error("invalid {name}: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    /// Power iteration ran out of iterations. Carries the last iterate so the
    /// caller can inspect or restart from it.
    #[error(
        "power iteration did not converge after {iterations} iterations \
         (estimate {estimate}, residual {residual:e})"
    )]
    NonConvergence {
        estimate: f64,
        residual: f64,
        iterations: usize,
        last_iterate: Vec<f64>,
    },

    #[error("node {node} is isolated; filter `{kind}` needs every node to have degree >= 1")]
    IsolatedNode { node: usize, kind: String },

    #[error("node {node} out of range for a graph with {num_nodes} nodes")]
    NodeOutOfRange { node: usize, num_nodes: usize },

    #[error("label {label} outside the label range [{y_min}, {y_max}]")]
    LabelOutOfRange { label: f64, y_min: f64, y_max: f64 },

    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("architecture mismatch: {0}")]
    Architecture(String),

    #[error("unsupported case: {0}")]
    Unsupported(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("training step {step}: {message}")]
    Training { step: usize, message: String },

    #[error("dataset generation failed: {0}")]
    Generation(String),

    #[error("every sweep cell failed; first failure: {0}")]
    SweepFailed(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
