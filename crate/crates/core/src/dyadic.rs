//! Finite dyadic system: a complete binary tree of half-open intervals.
//!
//! Nodes are addressed by `(level, index)` with heap arithmetic; the children
//! of `(k, j)` are `(k + 1, 2j)` (left, `I_-`) and `(k + 1, 2j + 1)` (right,
//! `I_+`). Geometry is kept only for reporting, every computation in this crate
//! goes through masses.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId {
    pub level: usize,
    pub index: usize,
}

impl NodeId {
    pub const ROOT: NodeId = NodeId { level: 0, index: 0 };

    pub fn new(level: usize, index: usize) -> Result<Self> {
        if level >= usize::BITS as usize - 1 || index >= 1usize << level {
            return Err(Error::InvalidNode { level, index });
        }
        Ok(NodeId { level, index })
    }

    /// Position in breadth-first (heap) order, root = 0.
    #[inline]
    pub fn heap_index(self) -> usize {
        (1usize << self.level) - 1 + self.index
    }

    #[inline]
    pub fn from_heap_index(heap: usize) -> Self {
        let level = (usize::BITS - 1 - (heap + 1).leading_zeros()) as usize;
        NodeId {
            level,
            index: heap + 1 - (1usize << level),
        }
    }

    pub fn is_root(self) -> bool {
        self.level == 0
    }

    /// Whether `self` is `other` or lies below it.
    pub fn is_within(self, other: NodeId) -> bool {
        self.level >= other.level && self.index >> (self.level - other.level) == other.index
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.level, self.index)
    }
}

impl FromStr for NodeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::BadNodeKey(s.to_string());
        let (k, j) = s.split_once(',').ok_or_else(bad)?;
        let level = k.trim().parse().map_err(|_| bad())?;
        let index = j.trim().parse().map_err(|_| bad())?;
        NodeId::new(level, index)
    }
}

impl Serialize for NodeId {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A complete binary tree of depth `D`: levels `0..=D`, `2^D` leaves.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DyadicTree {
    depth: usize,
    origin: f64,
    length: f64,
}

impl DyadicTree {
    /// Deepest tree we are willing to allocate; `2^30` leaves is already far
    /// beyond what the experiments use.
    pub const MAX_DEPTH: usize = 30;

    pub fn new(depth: usize) -> Result<Self> {
        Self::with_geometry(depth, 0.0, 1.0)
    }

    pub fn with_geometry(depth: usize, origin: f64, length: f64) -> Result<Self> {
        if depth < 1 {
            return Err(Error::DepthTooSmall { depth, min: 1 });
        }
        if depth > Self::MAX_DEPTH {
            return Err(Error::InvalidParameter(format!(
                "depth {depth} exceeds the supported maximum {}",
                Self::MAX_DEPTH
            )));
        }
        if !(length.is_finite() && length > 0.0 && origin.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "root interval must have finite origin and positive length, got origin={origin}, length={length}"
            )));
        }
        Ok(DyadicTree {
            depth,
            origin,
            length,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn node_count(&self) -> usize {
        (1usize << (self.depth + 1)) - 1
    }

    pub fn leaf_count(&self) -> usize {
        1usize << self.depth
    }

    /// Number of nodes that carry a Haar function (all non-leaves).
    pub fn internal_count(&self) -> usize {
        (1usize << self.depth) - 1
    }

    pub fn contains(&self, node: NodeId) -> bool {
        node.level <= self.depth && node.index < (1usize << node.level)
    }

    pub fn check(&self, node: NodeId) -> Result<()> {
        if self.contains(node) {
            Ok(())
        } else {
            Err(Error::NodeOutOfRange {
                node,
                depth: self.depth,
            })
        }
    }

    pub fn is_leaf(&self, node: NodeId) -> bool {
        node.level == self.depth
    }

    pub fn parent(&self, node: NodeId) -> Result<NodeId> {
        self.check(node)?;
        if node.level == 0 {
            return Err(Error::RootHasNoParent);
        }
        Ok(NodeId {
            level: node.level - 1,
            index: node.index / 2,
        })
    }

    /// `(I_-, I_+)`.
    pub fn children(&self, node: NodeId) -> Result<(NodeId, NodeId)> {
        self.check(node)?;
        if node.level >= self.depth {
            return Err(Error::LeafHasNoChildren(node));
        }
        Ok(children_unchecked(node))
    }

    /// The `2^r` descendants `r` generations below `node`, left to right.
    /// Element `s` is the selector `I_r^s`.
    pub fn descendants(&self, node: NodeId, r: usize) -> Result<Vec<NodeId>> {
        self.check(node)?;
        if node.level + r > self.depth {
            return Err(Error::DepthExceeded {
                node,
                generations: r,
                depth: self.depth,
            });
        }
        let base = node.index << r;
        Ok((0..1usize << r)
            .map(|s| NodeId {
                level: node.level + r,
                index: base + s,
            })
            .collect())
    }

    /// The single element `I_r^s` of `descendants(node, r)`.
    pub fn selector(&self, node: NodeId, r: usize, s: usize) -> Result<NodeId> {
        self.check(node)?;
        if node.level + r > self.depth {
            return Err(Error::DepthExceeded {
                node,
                generations: r,
                depth: self.depth,
            });
        }
        if s >= 1usize << r {
            return Err(Error::InvalidParameter(format!(
                "selector {s} out of range for {r} generations"
            )));
        }
        Ok(NodeId {
            level: node.level + r,
            index: (node.index << r) + s,
        })
    }

    pub fn ancestor(&self, node: NodeId, t: usize) -> Result<NodeId> {
        self.check(node)?;
        if t > node.level {
            return Err(Error::AboveRoot {
                node,
                generations: t,
            });
        }
        Ok(NodeId {
            level: node.level - t,
            index: node.index >> t,
        })
    }

    /// Leaves under `node`, as a range of leaf positions.
    #[inline]
    pub fn leaf_range(&self, node: NodeId) -> Range<usize> {
        let shift = self.depth - node.level;
        (node.index << shift)..((node.index + 1) << shift)
    }

    /// All nodes in heap order.
    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.node_count()).map(NodeId::from_heap_index)
    }

    /// All non-leaf nodes in heap order.
    pub fn internal_nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.internal_count()).map(NodeId::from_heap_index)
    }

    /// The generation `D_k`, left to right.
    pub fn generation(&self, k: usize) -> impl Iterator<Item = NodeId> {
        (0..1usize << k).map(move |index| NodeId { level: k, index })
    }

    /// Real interval `[a, b)` covered by `node`.
    pub fn interval(&self, node: NodeId) -> (f64, f64) {
        let width = self.length / (1u64 << node.level) as f64;
        let a = self.origin + width * node.index as f64;
        (a, a + width)
    }
}

#[inline]
pub(crate) fn children_unchecked(node: NodeId) -> (NodeId, NodeId) {
    let level = node.level + 1;
    (
        NodeId {
            level,
            index: 2 * node.index,
        },
        NodeId {
            level,
            index: 2 * node.index + 1,
        },
    )
}
