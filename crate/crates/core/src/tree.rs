//! Node representation shared by LSH-built and learned isolation trees.

use crate::error::{Error, Result};
use crate::lsh_tree::E2LshFunction;
use crate::opt_tree::learned_route;

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Leaf,
    /// Children are keyed by hash value; `buckets` is ascending and parallel
    /// to `children`.
    Lsh {
        function: E2LshFunction,
        buckets: Vec<i64>,
    },
    /// Nearest-centre routing; `centres[k]` belongs to `children[k]`.
    Learned { centres: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub kind: NodeKind,
    pub depth: usize,
    /// Training instances that reached this node.
    pub size: usize,
    pub children: Vec<TreeNode>,
}

impl TreeNode {
    pub fn leaf(size: usize, depth: usize) -> Self {
        Self {
            kind: NodeKind::Leaf,
            depth,
            size,
            children: Vec::new(),
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf)
    }

    /// Child index for `x`, or `None` when an LSH router sees a hash value
    /// that no training instance produced. Leaves always return `None`.
    pub fn route(&self, x: &[f64]) -> Result<Option<usize>> {
        match &self.kind {
            NodeKind::Leaf => Ok(None),
            NodeKind::Lsh { function, buckets } => {
                let h = function.hash(x)?;
                Ok(buckets.binary_search(&h).ok())
            }
            NodeKind::Learned { centres } => learned_route(centres, x).map(Some),
        }
    }

    /// Pre-order iterator over all nodes.
    pub fn iter(&self) -> impl Iterator<Item = &TreeNode> {
        let mut stack = vec![self];
        std::iter::from_fn(move || {
            let node = stack.pop()?;
            stack.extend(node.children.iter().rev());
            Some(node)
        })
    }

    pub fn leaves(&self) -> impl Iterator<Item = &TreeNode> {
        self.iter().filter(|n| n.is_leaf())
    }

    pub fn leaf_count_sum(&self) -> usize {
        self.leaves().map(|n| n.size).sum()
    }

    pub fn node_count(&self) -> usize {
        self.iter().count()
    }

    pub fn height(&self) -> usize {
        self.iter().map(|n| n.depth).max().unwrap_or(0) - self.depth
    }

    /// Mean child count over internal nodes (0 for a lone leaf).
    pub fn mean_branching(&self) -> f64 {
        let (internal, children) = self
            .iter()
            .filter(|n| !n.is_leaf())
            .fold((0usize, 0usize), |(i, c), n| (i + 1, c + n.children.len()));
        if internal == 0 {
            0.0
        } else {
            children as f64 / internal as f64
        }
    }

    /// Rewrites depths so this node sits at `depth`.
    pub fn restamp_depth(&mut self, depth: usize) {
        self.depth = depth;
        for child in &mut self.children {
            child.restamp_depth(depth + 1);
        }
    }

    pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
        if expected != got {
            return Err(Error::DimensionMismatch { expected, got });
        }
        Ok(())
    }
}
