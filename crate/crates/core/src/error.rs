use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("backward requires a 1x1 loss, got {0:?}")]
    NonScalarLoss((usize, usize)),

    #[error("mask selects no nodes")]
    EmptyMask,

    #[error("non-finite activations in {layer}, basis {basis}")]
    NonFiniteActivation { layer: String, basis: usize },

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("training diverged at epoch {epoch}: {diagnostic}")]
    Diverged { epoch: usize, diagnostic: String },

    #[error("missing bundle file {0}")]
    MissingFile(PathBuf),

    #[error("{file}:{line}: parse error: {msg}")]
    Parse { file: String, line: usize, msg: String },

    #[error("{what} has {found} entries, meta declares {expected}")]
    MetaMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{mask} mask index {index} out of range for {num_nodes} nodes")]
    MaskIndexOutOfRange {
        mask: &'static str,
        index: usize,
        num_nodes: usize,
    },

    #[error("node {index} appears in both the {first} and {second} masks")]
    MaskOverlap {
        index: usize,
        first: &'static str,
        second: &'static str,
    },

    #[error("node {index} listed twice in the {mask} mask")]
    MaskDuplicate { mask: &'static str, index: usize },

    #[error("label {label} of node {node} outside [0, {num_classes})")]
    LabelOutOfRange {
        node: usize,
        label: usize,
        num_classes: usize,
    },

    #[error("class {0} has no node in the train mask")]
    ClassMissingFromTrain(usize),

    #[error("edge line {line}: endpoint {node} out of range for {num_nodes} nodes")]
    EdgeOutOfRange { line: usize, node: usize, num_nodes: usize },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn shape_check(op: &'static str, ok: bool, lhs: (usize, usize), rhs: (usize, usize)) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Shape { op, lhs, rhs })
    }
}
