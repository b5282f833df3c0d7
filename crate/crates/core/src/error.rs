use std::path::PathBuf;

use thiserror::Error;

use crate::graph::{EdgeId, NodeId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("a training graph needs at least one layer")]
    NoLayers,

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("node {0} has no bound semantics")]
    UnboundSemantics(NodeId),

    #[error("combinational cycle through node {0} (every cycle needs a delay or a weight register)")]
    CombinationalCycle(NodeId),

    #[error("invalid stage partition: {0}")]
    InvalidPartition(String),

    #[error(
        "illegal retiming: edge {edge} carries {available} delay(s) but {requested} must be removed"
    )]
    IllegalRetiming {
        edge: EdgeId,
        available: usize,
        requested: usize,
    },

    #[error("delay compaction did not terminate within {0} iterations")]
    CompactionDiverged(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("stale forward cache: {0}")]
    StaleCache(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("unknown weight strategy `{0}`")]
    UnknownStrategy(String),

    #[error("gradient averager has not observed any gradient yet")]
    NotWarmedUp,

    #[error("staleness must be odd and at least 1, got {0}")]
    BadStaleness(usize),

    #[error("no stashed weights for forward tick {0}")]
    MissingSnapshot(usize),

    #[error("update log has a gap: needed {needed} entries, have {have}")]
    LogGap { needed: usize, have: usize },

    #[error("stash overflow on layer {layer}: capacity {capacity}")]
    StashOverflow { layer: usize, capacity: usize },

    #[error("stash underflow on layer {layer}: nothing stashed for microbatch {microbatch}")]
    StashUnderflow { layer: usize, microbatch: usize },

    #[error("schedule does not match the model: {0}")]
    Schedule(String),

    #[error("idx file {path}: {msg}")]
    Idx { path: PathBuf, msg: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
