use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: expected at least two delimited fields")]
    MalformedLine { path: PathBuf, line: usize },
    #[error("k-core must be at least 1, got {0}")]
    InvalidK(usize),
    #[error("k-core eliminated all data")]
    KCoreEmpty,
    #[error("need at least 10 edges to split, got {0}")]
    TooFewEdges(usize),
    #[error("no trainable graph: edge set is empty")]
    EmptyGraph,
    #[error("edge references unknown key {0:?}")]
    UnknownKey(String),
    #[error("split manifest: {0}")]
    Manifest(String),
}

#[derive(Debug, Error)]
pub enum LayerError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("layer {layer}: non-finite output in row {row}")]
    NonFinite { layer: usize, row: usize },
    #[error("embedding has {got} rows, graph needs {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("instance too large for the naive path: n*m = {0}")]
    TooLarge(usize),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint magic")]
    BadMagic,
    #[error("checkpoint truncated: expected {expected} values, found {found}")]
    Truncated { expected: usize, found: usize },
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training diverged at epoch {epoch}: loss is not finite (last good epoch: {last_good:?})")]
    Diverged { epoch: usize, last_good: Option<usize> },
    #[error("non-finite gradient at epoch {epoch}, row {row} (last good epoch: {last_good:?})")]
    NonFiniteGradient {
        epoch: usize,
        row: usize,
        last_good: Option<usize>,
    },
    #[error(transparent)]
    Layer(#[from] LayerError),
}
