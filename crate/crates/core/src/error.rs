use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: left is {left:?}, right is {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown activation kind `{0}` (expected relu, sigmoid or linear)")]
    UnknownActivation(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("empty batch: {0}")]
    EmptyBatch(&'static str),

    #[error("non-finite {term} loss at epoch {epoch}, step {step}: {value}")]
    NonFiniteLoss {
        term: &'static str,
        epoch: usize,
        step: usize,
        value: f64,
    },

    #[error("csv {path}: missing required column `{column}`")]
    MissingColumn { path: PathBuf, column: String },

    #[error("csv {path}: row {row}, column {column}: cannot parse `{value}`")]
    ParseCell {
        path: PathBuf,
        row: usize,
        column: String,
        value: String,
    },

    #[error("csv {path}: row {row} has {found} fields, expected {expected}")]
    RowWidth {
        path: PathBuf,
        row: usize,
        found: usize,
        expected: usize,
    },

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: String, expected: u32 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("experiment cell {cell} failed: {source}")]
    Cell {
        cell: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
