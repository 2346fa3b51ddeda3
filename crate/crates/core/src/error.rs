use thiserror::Error;

use crate::geometry::NodeId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("partitions have different box counts ({0} vs {1})")]
    UnequalBoxCount(usize, usize),

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("node {0} is not a leaf")]
    NotALeaf(NodeId),

    #[error("node {0} does not exist")]
    NoSuchNode(NodeId),

    #[error("split point {tau} is not interior to ({lo}, {hi}) on coordinate {coord}")]
    SplitOutsideNode { coord: usize, tau: f64, lo: f64, hi: f64 },

    #[error("split point {tau} on coordinate {coord} is not a split-net candidate")]
    SplitNotInNet { coord: usize, tau: f64 },

    #[error("coordinate {coord} outside [0, 1]: {value}")]
    OutOfUnitCube { coord: usize, value: f64 },

    #[error("size overflow: {0}")]
    Overflow(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty data set")]
    EmptyData,

    #[error("classification labels must be 0 or 1, found {0}")]
    InvalidLabel(f64),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
