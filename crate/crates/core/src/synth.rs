//! Synthetic geometric trees with controllable branching and curvature.
//!
//! Trees grow breadth-first from a root. Each child direction is its parent's
//! direction bent by an angle drawn from a depth-dependent profile, which is
//! what separates the two classes of the classification task: class 0 bends
//! strongly near the root and gently near the tips, class 1 bends by the same
//! average amount everywhere.

use std::collections::VecDeque;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{GtmpError, Result};
use crate::tree::{compute_targets, GeometricTree, Label, NodeRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthTask {
    /// Two balanced classes that differ in how bend angle varies with depth.
    Classification,
    /// Spatial diameter / radius targets.
    Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub count: usize,
    /// Inclusive range of the depth each tree grows to.
    pub min_depth: usize,
    pub max_depth: usize,
    /// `branch_probs[c]` is the probability that an inner node gets `c + 1` children.
    pub branch_probs: Vec<f64>,
    pub step_mean: f64,
    /// Step lengths are uniform in `step_mean * (1 ± step_jitter)`.
    pub step_jitter: f64,
    pub max_nodes: usize,
    /// Depth levels below the root that always have exactly one child.
    pub trunk_len: usize,
    pub task: SynthTask,
    /// Bend angles in degrees: class 0 goes from `bend_root_deg` at the root to
    /// `bend_tip_deg` at full depth; class 1 uses their mean everywhere.
    pub bend_root_deg: f64,
    pub bend_tip_deg: f64,
    pub bend_noise_deg: f64,
    /// Reject configurations that cannot produce depth-3 branches.
    pub require_depth3: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            count: 200,
            min_depth: 8,
            max_depth: 10,
            branch_probs: vec![0.3, 0.7],
            step_mean: 1.0,
            step_jitter: 0.2,
            max_nodes: 120,
            trunk_len: 2,
            task: SynthTask::Classification,
            bend_root_deg: 70.0,
            bend_tip_deg: 10.0,
            bend_noise_deg: 8.0,
            require_depth3: true,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GtmpError::Config(m));
        if self.min_depth > self.max_depth {
            return bad(format!("min_depth {} > max_depth {}", self.min_depth, self.max_depth));
        }
        if self.require_depth3 && (self.min_depth < 3 || self.max_nodes < 4) {
            return bad("depth-3 branches need min_depth >= 3 and max_nodes >= 4".into());
        }
        if self.branch_probs.is_empty()
            || self.branch_probs.iter().any(|p| !(p.is_finite() && *p >= 0.0))
            || self.branch_probs.iter().sum::<f64>() <= 0.0
        {
            return bad("branch_probs must be non-negative with positive total".into());
        }
        if !(self.step_mean > 0.0) || !(0.0..1.0).contains(&self.step_jitter) {
            return bad("step_mean must be positive and step_jitter in [0, 1)".into());
        }
        if self.max_nodes == 0 {
            return bad("max_nodes must be positive".into());
        }
        Ok(())
    }
}

/// A generated tree and its targets.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub tree: GeometricTree,
    pub class: Option<usize>,
    pub diameter: f64,
    pub radius: f64,
}

impl SyntheticSample {
    /// The target a manifest should record for this sample's task.
    pub fn target(&self) -> f64 {
        match self.class {
            Some(c) => c as f64,
            None => self.diameter,
        }
    }
}

fn unit_perpendiculars(d: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if d.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let u = d.cross(&helper).normalize();
    let v = d.cross(&u);
    (u, v)
}

fn random_unit<R: Rng>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n: f64 = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

/// Generates `config.count` trees; a pure function of `(config, seed)`.
pub fn generate_synthetic(config: &GeneratorConfig, seed: u64) -> Result<Vec<SyntheticSample>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: f64 = config.branch_probs.iter().sum();
    let noise = Normal::new(0.0, config.bend_noise_deg.max(0.0).to_radians()).expect("finite std");
    let mut out = Vec::with_capacity(config.count);

    for t in 0..config.count {
        let class = match config.task {
            SynthTask::Classification => Some(t % 2),
            SynthTask::Regression => None,
        };
        let depth = rng.random_range(config.min_depth..=config.max_depth);
        let bend_at = |level: usize| -> f64 {
            let root = config.bend_root_deg.to_radians();
            let tip = config.bend_tip_deg.to_radians();
            match class {
                Some(1) => 0.5 * (root + tip),
                _ => {
                    let frac = level as f64 / depth.max(1) as f64;
                    root + (tip - root) * frac
                }
            }
        };

        let mut positions = vec![Vector3::zeros()];
        let mut parents: Vec<Option<usize>> = vec![None];
        let mut queue = VecDeque::from([(0usize, random_unit(&mut rng), 0usize)]);
        while let Some((node, dir, level)) = queue.pop_front() {
            if level >= depth {
                continue;
            }
            let n_children = if level < config.trunk_len {
                1
            } else {
                let mut x = rng.random::<f64>() * total;
                let mut c = config.branch_probs.len();
                for (q, p) in config.branch_probs.iter().enumerate() {
                    if x < *p {
                        c = q + 1;
                        break;
                    }
                    x -= p;
                }
                c
            };
            let (u, v) = unit_perpendiculars(&dir);
            let azimuth0 = rng.random::<f64>() * std::f64::consts::TAU;
            for c in 0..n_children {
                if positions.len() >= config.max_nodes {
                    break;
                }
                let bend = (bend_at(level) + noise.sample(&mut rng)).clamp(0.0, 170f64.to_radians());
                let azimuth = azimuth0 + std::f64::consts::TAU * c as f64 / n_children as f64;
                let side = u * azimuth.cos() + v * azimuth.sin();
                let new_dir = (dir * bend.cos() + side * bend.sin()).normalize();
                let step = config.step_mean * (1.0 + config.step_jitter * rng.random_range(-1.0..1.0));
                positions.push(positions[node] + new_dir * step);
                parents.push(Some(node));
                queue.push_back((positions.len() - 1, new_dir, level + 1));
            }
        }

        let nodes = positions
            .iter()
            .zip(&parents)
            .enumerate()
            .map(|(i, (p, parent))| NodeRecord {
                id: i as i64,
                parent: parent.map(|q| q as i64),
                position: [p.x, p.y, p.z],
                attrs: vec![],
            })
            .collect();
        let label = class.map(|c| Label::Number(c as f64));
        let tree = GeometricTree::new(nodes, label)?;
        let (diameter, radius) = compute_targets(&tree);
        out.push(SyntheticSample { tree, class, diameter, radius });
    }
    Ok(out)
}

/// A tree of exactly `n` nodes: each new node attaches to a uniformly chosen
/// earlier node, offset by a random direction and a length in `[0.5, 1.5)`.
pub fn random_recursive_tree(n: usize, seed: u64) -> Result<GeometricTree> {
    random_tree_with(n, seed, |rng, i| rng.random_range(0..i))
}

/// A tree of exactly `n` nodes grown breadth-first with one or two children
/// per node, so depth grows logarithmically. Used by the scaling benchmark.
pub fn random_bushy_tree(n: usize, seed: u64) -> Result<GeometricTree> {
    // Parent of node i is the frontier position; each frontier node takes 1 or 2 children.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut parents = vec![0usize; n];
    let mut frontier = 0usize;
    let mut taken = 0usize;
    let mut quota = 1 + usize::from(rng.random::<bool>());
    for p in parents.iter_mut().skip(1) {
        if taken == quota {
            frontier += 1;
            taken = 0;
            quota = 1 + usize::from(rng.random::<bool>());
        }
        *p = frontier;
        taken += 1;
    }
    random_tree_with(n, seed, move |_, i| parents[i])
}

/// Like [`random_recursive_tree`], but nodes 0 -> 1 -> 2 form a trunk: the root
/// and node 1 have a single child each, so every other node sits at depth >= 3
/// below some full branch and the tree is recoverable from its features.
pub fn random_trunked_tree(n: usize, seed: u64) -> Result<GeometricTree> {
    random_tree_with(n, seed, |rng, i| if i <= 3 { i - 1 } else { rng.random_range(2..i) })
}

fn random_tree_with(n: usize, seed: u64, mut parent_of: impl FnMut(&mut ChaCha8Rng, usize) -> usize) -> Result<GeometricTree> {
    if n == 0 {
        return Err(GtmpError::Config("tree needs at least one node".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<Vector3<f64>> = vec![Vector3::zeros()];
    let mut nodes = vec![NodeRecord { id: 0, parent: None, position: [0.0; 3], attrs: vec![] }];
    for i in 1..n {
        let p = parent_of(&mut rng, i);
        let step = random_unit(&mut rng) * rng.random_range(0.5..1.5);
        let x = pos[p] + step;
        pos.push(x);
        nodes.push(NodeRecord { id: i as i64, parent: Some(p as i64), position: [x.x, x.y, x.z], attrs: vec![] });
    }
    GeometricTree::new(nodes, None)
}
