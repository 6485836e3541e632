use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch in {dim}: {detail}")]
    ShapeMismatch {
        op: &'static str,
        dim: &'static str,
        detail: String,
    },

    #[error("{op}: output has zero extent ({detail})")]
    ZeroExtent { op: &'static str, detail: String },

    #[error("{op}: window {window} larger than input {input}")]
    WindowTooLarge {
        op: &'static str,
        window: String,
        input: String,
    },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("backward without graph: {0}")]
    BackwardWithoutGraph(&'static str),

    #[error("backward already ran on this graph")]
    GraphConsumed,

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: String, index: usize },

    #[error("label {label} at index {index} is outside [0, {classes})")]
    LabelOutOfRange { index: usize, label: usize, classes: usize },

    #[error("parameter {name} has no gradient")]
    MissingGrad { name: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("config line {line}: {message}")]
    ConfigLine { line: usize, message: String },

    #[error("stage {stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{source_name}{}: {message}", line.map(|l| format!(" line {l}")).unwrap_or_default())]
    Data {
        source_name: String,
        line: Option<usize>,
        message: String,
    },

    #[error("dataset is empty: {0}")]
    EmptyDataset(String),

    #[error("pixmap: {0}")]
    Pnm(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint: checksum mismatch for {name}")]
    ChecksumMismatch { name: String },

    #[error("checkpoint: config field {field} differs (file {found}, expected {expected})")]
    ConfigMismatch {
        field: String,
        found: String,
        expected: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, dim: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            dim,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}
