use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: column `{0}` not found")]
    MissingColumn(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("parse error at data row {row}, column `{column}`: {msg}")]
    Parse {
        row: usize,
        column: String,
        msg: String,
    },
    #[error("degenerate column: {0}")]
    DegenerateColumn(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error("training set is empty after removing held-out nodes")]
    EmptyTraining,
    #[error("fold {fold} holds {size} held-out nodes; at least 2 are required")]
    FoldSize { fold: usize, size: usize },
    #[error("could not assign blocks to {folds} non-empty folds after {attempts} attempts")]
    EmptyFold { folds: usize, attempts: usize },
    #[error("training diverged at epoch {epoch}: total={total}, mse={mse}, sparse={sparse}, mag={mag}")]
    Divergence {
        epoch: usize,
        total: f64,
        mse: f64,
        sparse: f64,
        mag: f64,
    },
    #[error("ground-truth fields are not attached to this dataset")]
    TruthUnavailable,
    #[error("empty search grid")]
    EmptyGrid,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
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
}

pub type Result<T> = std::result::Result<T, Error>;
