//! Enumeration of the length-three descending branches rooted at each node.

use crate::tree::GeometricTree;

/// Marks an unused branch slot.
pub const PAD: usize = usize::MAX;

/// A descending path `i -> j -> k -> p`. Slots past `valid_len` hold [`PAD`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Branch3 {
    pub nodes: [usize; 4],
    pub valid_len: u8,
}

impl Branch3 {
    pub fn i(&self) -> usize {
        self.nodes[0]
    }

    pub fn is_full(&self) -> bool {
        self.valid_len == 3
    }
}

/// Branches grouped by their originating node: `of(i)` is the branch set of node `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchIndex {
    pub branches: Vec<Branch3>,
    /// `offsets[i]..offsets[i + 1]` indexes the branches of node `i`.
    pub offsets: Vec<usize>,
}

impl BranchIndex {
    pub fn of(&self, node: usize) -> &[Branch3] {
        &self.branches[self.offsets[node]..self.offsets[node + 1]]
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn full_count(&self) -> usize {
        self.branches.iter().filter(|b| b.is_full()).count()
    }
}

/// Every maximal descending path of at most three edges from every node.
///
/// A path shorter than three edges is emitted only when it ends at a leaf, so
/// a leaf has no branches and each node at depth >= 3 terminates exactly one
/// full branch.
pub fn enumerate_branches(tree: &GeometricTree) -> BranchIndex {
    let mut branches = Vec::with_capacity(tree.len() * 2);
    let mut offsets = Vec::with_capacity(tree.len() + 1);
    offsets.push(0);
    for i in 0..tree.len() {
        for &j in tree.children(i) {
            if tree.is_leaf(j) {
                branches.push(Branch3 { nodes: [i, j, PAD, PAD], valid_len: 1 });
                continue;
            }
            for &k in tree.children(j) {
                if tree.is_leaf(k) {
                    branches.push(Branch3 { nodes: [i, j, k, PAD], valid_len: 2 });
                    continue;
                }
                for &p in tree.children(k) {
                    branches.push(Branch3 { nodes: [i, j, k, p], valid_len: 3 });
                }
            }
        }
        offsets.push(branches.len());
    }
    BranchIndex { branches, offsets }
}
