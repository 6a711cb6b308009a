use thiserror::Error;

use crate::dyadic::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("the root node has no parent")]
    RootHasNoParent,
    #[error("node {0} is a leaf and has no children")]
    LeafHasNoChildren(NodeId),
    #[error("node {node} has no descendants {generations} generations down (tree depth {depth})")]
    DepthExceeded {
        node: NodeId,
        generations: usize,
        depth: usize,
    },
    #[error("node {node} has no ancestor {generations} generations up")]
    AboveRoot { node: NodeId, generations: usize },
    #[error("node {node} is outside a tree of depth {depth}")]
    NodeOutOfRange { node: NodeId, depth: usize },
    #[error("invalid node index {index} at level {level}")]
    InvalidNode { level: usize, index: usize },
    #[error("cannot parse node key {0:?}, expected \"level,index\"")]
    BadNodeKey(String),
    #[error("tree depth {depth} is too small, need at least {min}")]
    DepthTooSmall { depth: usize, min: usize },
    #[error("leaf mass #{index} is {value}, masses must be finite and strictly positive")]
    NonPositiveMass { index: usize, value: f64 },
    #[error("expected {expected} leaf values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("depth mismatch: {left} vs {right}")]
    DepthMismatch { left: usize, right: usize },
    #[error("level {level} is out of range [{min}, {max}]")]
    LevelOutOfRange { level: i64, min: i64, max: i64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("malformed shift term: {0}")]
    MalformedTerm(String),
    #[error("function has nonzero root mean {0:e}")]
    NonzeroMean(f64),
    #[error("{0}")]
    Io(String),
    #[error("malformed input: {0}")]
    Format(String),
    #[error("sibling hypothesis not met at {node}: anchor child carries more than half of the parent mass")]
    HypothesisNotMet { node: NodeId },
}
