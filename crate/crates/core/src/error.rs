use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}: cloud has no points")]
    EmptyCloud { path: PathBuf },

    #[error("{path}: line {line}: face repeats vertex index {index}")]
    DegenerateFace {
        path: PathBuf,
        line: usize,
        index: usize,
    },

    #[error("invalid point cloud: {0}")]
    InvalidCloud(String),

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("batch norm in training mode needs at least 2 rows, got {0}")]
    BatchTooSmall(usize),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("parameter {0} has no gradient")]
    MissingGrad(String),

    #[error("unknown parameter {0}")]
    UnknownParam(String),

    #[error("unknown shape class {0:?}")]
    UnknownShape(String),

    #[error("cluster {0} has no member parts")]
    EmptyCluster(usize),

    #[error("class set mismatch: checkpoint has {expected:?}, dataset has {found:?}")]
    ClassMismatch {
        expected: Vec<String>,
        found: Vec<String>,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("non-finite loss on object {object}: {detail}")]
    NonFiniteLoss { object: String, detail: String },

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
