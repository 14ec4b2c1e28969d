use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("face index {index} out of range for {n_vertices} vertices")]
    IndexOutOfRange { index: usize, n_vertices: usize },

    #[error("empty geometry: {0}")]
    EmptyGeometry(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-manifold edge ({0}, {1}) shared by more than two faces")]
    NonManifoldEdge(usize, usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("eigensolver did not converge (relative residual {residual:.3e})")]
    EigenNotConverged { residual: f64 },

    #[error("map direction mismatch: expected {expected}, got {got}")]
    DirectionMismatch { expected: String, got: String },

    #[error("stale cache: {0}")]
    StaleCache(String),

    #[error("training diverged at iteration {iteration}: {msg}")]
    Diverged { iteration: usize, msg: String },

    #[error("format error: {0}")]
    Format(String),
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
