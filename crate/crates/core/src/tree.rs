//! Geometric tree data model and validation.
//!
//! A [`GeometricTree`] is an immutable, validated rooted tree whose nodes carry
//! 3D coordinates and an optional attribute vector. Nodes keep their external
//! integer ids, but every algorithm in the crate works on dense indices
//! `0..len()` in insertion order.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{GtmpError, Result};

/// Minimum admissible parent-child distance.
pub const MIN_EDGE_LENGTH: f64 = 1e-9;

/// One node as it appears in an input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: i64,
    pub parent: Option<i64>,
    pub position: [f64; 3],
    pub attrs: Vec<f64>,
}

/// Per-tree target: a number, a class name, or nothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Number(f64),
    Text(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometricTree {
    nodes: Vec<NodeRecord>,
    label: Option<Label>,
    root: usize,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    depth: Vec<usize>,
    // Euler-tour entry/exit times for O(1) descendant queries.
    tin: Vec<usize>,
    tout: Vec<usize>,
    index_of: HashMap<i64, usize>,
}

impl GeometricTree {
    /// Validates `nodes` and builds the tree.
    ///
    /// Checks, in order: non-empty, unique ids, finite coordinates, consistent
    /// attribute width, parent references, acyclicity, a single root and edge
    /// lengths of at least [`MIN_EDGE_LENGTH`].
    pub fn new(nodes: Vec<NodeRecord>, label: Option<Label>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(GtmpError::Format("tree has no nodes".into()));
        }
        let mut index_of = HashMap::with_capacity(nodes.len());
        for (idx, n) in nodes.iter().enumerate() {
            if index_of.insert(n.id, idx).is_some() {
                return Err(GtmpError::Format(format!("duplicate node id {}", n.id)));
            }
        }
        let attr_width = nodes[0].attrs.len();
        for n in &nodes {
            if n.position.iter().any(|c| !c.is_finite()) || n.attrs.iter().any(|a| !a.is_finite()) {
                return Err(GtmpError::Format(format!("node {} has a non-finite value", n.id)));
            }
            if n.attrs.len() != attr_width {
                return Err(GtmpError::Format(format!(
                    "node {} has {} attrs, expected {}",
                    n.id,
                    n.attrs.len(),
                    attr_width
                )));
            }
        }

        let mut parent = vec![None; nodes.len()];
        for (idx, n) in nodes.iter().enumerate() {
            if let Some(pid) = n.parent {
                let &p = index_of.get(&pid).ok_or_else(|| {
                    GtmpError::Format(format!("node {} references missing parent {}", n.id, pid))
                })?;
                parent[idx] = Some(p);
            }
        }

        // Walk up from every node; 1 = on the current walk, 2 = known to reach a root.
        let mut state = vec![0u8; nodes.len()];
        for start in 0..nodes.len() {
            let mut walk = Vec::new();
            let mut cur = Some(start);
            while let Some(c) = cur {
                match state[c] {
                    2 => break,
                    1 => return Err(GtmpError::Cycle(nodes[c].id)),
                    _ => {
                        state[c] = 1;
                        walk.push(c);
                        cur = parent[c];
                    }
                }
            }
            for w in walk {
                state[w] = 2;
            }
        }

        let roots: Vec<usize> = (0..nodes.len()).filter(|&i| parent[i].is_none()).collect();
        if roots.len() != 1 {
            return Err(GtmpError::MultiRoot(roots.iter().map(|&r| nodes[r].id).collect()));
        }
        let root = roots[0];

        for (idx, p) in parent.iter().enumerate() {
            if let Some(p) = *p {
                let length = distance(&nodes[idx].position, &nodes[p].position);
                if length < MIN_EDGE_LENGTH {
                    return Err(GtmpError::DegenerateEdge {
                        parent: nodes[p].id,
                        child: nodes[idx].id,
                        length,
                    });
                }
            }
        }

        let mut children = vec![Vec::new(); nodes.len()];
        for (idx, p) in parent.iter().enumerate() {
            if let Some(p) = *p {
                children[p].push(idx);
            }
        }

        let n = nodes.len();
        let mut depth = vec![0usize; n];
        let mut tin = vec![0usize; n];
        let mut tout = vec![0usize; n];
        let mut clock = 0;
        let mut stack = vec![(root, 0usize)];
        while let Some(&mut (v, ref mut next)) = stack.last_mut() {
            if *next == 0 {
                tin[v] = clock;
                clock += 1;
            }
            if *next < children[v].len() {
                let c = children[v][*next];
                *next += 1;
                depth[c] = depth[v] + 1;
                stack.push((c, 0));
            } else {
                tout[v] = clock;
                stack.pop();
            }
        }

        Ok(Self { nodes, label, root, parent, children, depth, tin, tout, index_of })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[NodeRecord] {
        &self.nodes
    }

    pub fn label(&self) -> Option<&Label> {
        self.label.as_ref()
    }

    pub fn with_label(mut self, label: Option<Label>) -> Self {
        self.label = label;
        self
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        self.parent[v]
    }

    pub fn children(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    pub fn depth(&self, v: usize) -> usize {
        self.depth[v]
    }

    pub fn max_depth(&self) -> usize {
        self.depth.iter().copied().max().unwrap_or(0)
    }

    pub fn position(&self, v: usize) -> [f64; 3] {
        self.nodes[v].position
    }

    pub fn id(&self, v: usize) -> i64 {
        self.nodes[v].id
    }

    pub fn index_of(&self, id: i64) -> Option<usize> {
        self.index_of.get(&id).copied()
    }

    pub fn attr_width(&self) -> usize {
        self.nodes[0].attrs.len()
    }

    pub fn edge_count(&self) -> usize {
        self.parent.iter().filter(|p| p.is_some()).count()
    }

    pub fn is_leaf(&self, v: usize) -> bool {
        self.children[v].is_empty()
    }

    /// True when `d` lies strictly below `a`.
    pub fn is_proper_descendant(&self, a: usize, d: usize) -> bool {
        a != d && self.tin[a] <= self.tin[d] && self.tout[d] <= self.tout[a]
    }

    /// Ancestors of `v` from its parent up to the root.
    pub fn ancestors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        std::iter::successors(self.parent[v], move |&a| self.parent[a])
    }

    /// Same topology and attrs with new coordinates, revalidated.
    pub fn with_positions(&self, positions: &[[f64; 3]]) -> Result<Self> {
        if positions.len() != self.len() {
            return Err(GtmpError::Shape(format!(
                "{} positions for {} nodes",
                positions.len(),
                self.len()
            )));
        }
        let nodes = self
            .nodes
            .iter()
            .zip(positions)
            .map(|(n, p)| NodeRecord { position: *p, ..n.clone() })
            .collect();
        Self::new(nodes, self.label.clone())
    }

    /// Same geometry with node attributes replaced.
    pub fn with_attrs(&self, attrs: Vec<Vec<f64>>) -> Result<Self> {
        if attrs.len() != self.len() {
            return Err(GtmpError::Shape("attribute row count differs from node count".into()));
        }
        let nodes = self
            .nodes
            .iter()
            .zip(attrs)
            .map(|(n, a)| NodeRecord { attrs: a, ..n.clone() })
            .collect();
        Self::new(nodes, self.label.clone())
    }
}

pub(crate) fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Spatial diameter and radius over straight-line node-to-node distances.
///
/// Diameter is the largest pairwise distance; radius is the smallest
/// eccentricity. Both are 0 for a single node.
pub fn compute_targets(tree: &GeometricTree) -> (f64, f64) {
    let pts: Vec<[f64; 3]> = tree.nodes().iter().map(|n| n.position).collect();
    let mut ecc = vec![0.0f64; pts.len()];
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            let d = distance(&pts[i], &pts[j]);
            if d > ecc[i] {
                ecc[i] = d;
            }
            if d > ecc[j] {
                ecc[j] = d;
            }
        }
    }
    let diameter = ecc.iter().copied().fold(0.0, f64::max);
    let radius = if pts.len() < 2 { 0.0 } else { ecc.iter().copied().fold(f64::INFINITY, f64::min) };
    (diameter, radius)
}
