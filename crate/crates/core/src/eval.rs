//! Rigid-motion robustness test and the runtime scaling benchmark.

use std::time::Instant;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::{GtmpError, Result};
use crate::geometry::{apply_rigid, random_rotation_with, RigidTransform};
use crate::io::TaskKind;
use crate::metrics::{auc, mean_std, pearson};
use crate::model::{EncoderConfig, GtmpModel, ModelConfig, PreparedTree, TaskSpec};
use crate::objectives::supervised_loss_graph;
use crate::synth::random_bushy_tree;
use crate::tree::GeometricTree;

/// A uniformly random rotation followed by a translation of exactly `magnitude`
/// in a uniformly random direction.
pub fn random_rigid(magnitude: f64, seed: u64) -> RigidTransform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rot = random_rotation_with(&mut rng);
    let dir = loop {
        let v = Vector3::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
        let n: f64 = v.norm();
        if n > 1e-6 {
            break v / n;
        }
    };
    rot.with_translation([dir.x * magnitude, dir.y * magnitude, dir.z * magnitude])
}

/// Scalar prediction of a trained model: class-1 probability or the regression value.
pub fn model_scalar_score(model: &GtmpModel) -> impl Fn(&GeometricTree) -> Result<f64> + Sync + '_ {
    move |tree| {
        let task = model.config.task.ok_or_else(|| GtmpError::Contract("model has no task head".into()))?;
        let out = model.score(&PreparedTree::new(tree)?)?;
        Ok(match task.kind {
            TaskKind::Regression => out[0],
            TaskKind::Classification => {
                let m = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = out.iter().map(|v| (v - m).exp()).sum();
                (out[1.min(out.len() - 1)] - m).exp() / z
            }
        })
    }
}

/// Copy of `tree` with its raw coordinates appended to every node's attributes.
///
/// Feeding these to a model deliberately breaks invariance (a negative control).
pub fn with_coordinate_attrs(tree: &GeometricTree) -> Result<GeometricTree> {
    let attrs = tree
        .nodes()
        .iter()
        .map(|n| n.attrs.iter().copied().chain(n.position).collect())
        .collect();
    tree.with_attrs(attrs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariancePoint {
    pub magnitude: f64,
    pub max_deviation: f64,
    /// Mean AUC over the transforms at this magnitude, when labels were given.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub max_deviation: f64,
    pub baseline_auc: Option<f64>,
    pub points: Vec<InvariancePoint>,
}

impl InvarianceReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("magnitude,max_deviation,auc\n");
        for p in &self.points {
            let a = p.auc.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{}\n", p.magnitude, p.max_deviation, a));
        }
        s
    }
}

/// Rescores every tree under `n_transforms` random rigid motions per translation magnitude.
///
/// `score` is any tree-to-scalar predictor; `labels` enables per-magnitude AUC.
pub fn invariance_test<F>(
    score: F,
    trees: &[GeometricTree],
    labels: Option<&[bool]>,
    n_transforms: usize,
    magnitudes: &[f64],
    seed: u64,
) -> Result<InvarianceReport>
where
    F: Fn(&GeometricTree) -> Result<f64> + Sync,
{
    if labels.is_some_and(|l| l.len() != trees.len()) {
        return Err(GtmpError::Metric("labels and trees differ in length".into()));
    }
    let base: Vec<f64> = trees.iter().map(&score).collect::<Result<_>>()?;
    let baseline_auc = labels.map(|l| auc(&base, l)).transpose()?;
    let mut points = Vec::with_capacity(magnitudes.len());
    let mut overall = 0.0f64;
    for (mi, &m) in magnitudes.iter().enumerate() {
        let mut worst = 0.0f64;
        let mut aucs = Vec::new();
        for t in 0..n_transforms {
            let rigid = random_rigid(m, seed ^ ((mi as u64) << 32 | t as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let mut moved_scores = Vec::with_capacity(trees.len());
            for (tree, b) in trees.iter().zip(&base) {
                let s = score(&apply_rigid(tree, &rigid)?)?;
                worst = worst.max((s - b).abs());
                moved_scores.push(s);
            }
            if let Some(l) = labels {
                aucs.push(auc(&moved_scores, l)?);
            }
        }
        overall = overall.max(worst);
        let auc = (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64);
        points.push(InvariancePoint { magnitude: m, max_deviation: worst, auc });
    }
    Ok(InvarianceReport { max_deviation: overall, baseline_auc, points })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub nodes: usize,
    pub branches: usize,
    pub mean_seconds: f64,
    pub std_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub pearson_r: f64,
}

impl BenchReport {
    pub fn to_table(&self) -> String {
        let mut s = format!("{:>8} {:>10} {:>12} {:>10}\n", "nodes", "branches", "seconds", "std");
        for r in &self.rows {
            s.push_str(&format!("{:>8} {:>10} {:>12.4} {:>10.4}\n", r.nodes, r.branches, r.mean_seconds, r.std_seconds));
        }
        s.push_str(&format!("Pearson r = {:.4}\n", self.pearson_r));
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("nodes,branches,mean_seconds,std_seconds\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{}\n", r.nodes, r.branches, r.mean_seconds, r.std_seconds));
        }
        s
    }
}

/// Times one forward and backward pass of a supervised loss per tree, on the
/// calling thread, for `trees_per_point` random trees of each size.
pub fn bench_scaling(sizes: &[usize], trees_per_point: usize, encoder: &EncoderConfig, seed: u64) -> Result<BenchReport> {
    if sizes.len() < 2 || sizes.windows(2).any(|w| w[1] <= w[0]) || sizes[0] == 0 {
        return Err(GtmpError::Config("bench sizes must be >= 2 positive, strictly ascending counts".into()));
    }
    if trees_per_point == 0 {
        return Err(GtmpError::Config("trees_per_point must be positive".into()));
    }
    let mut enc = encoder.clone();
    enc.attr_dim = 0;
    let task = TaskSpec { kind: TaskKind::Classification, num_classes: 2 };
    let model = GtmpModel::new(ModelConfig { encoder: enc, task: Some(task), generator_bins: None }, seed)?;
    let mut times = vec![Vec::with_capacity(trees_per_point); sizes.len()];
    let mut branches = vec![0usize; sizes.len()];
    // Sizes are interleaved so slow stretches of machine time spread over every point.
    for t in 0..trees_per_point {
        for (si, &n) in sizes.iter().enumerate() {
            let tree = random_bushy_tree(n, seed.wrapping_add((si * 7919 + t) as u64))?;
            let started = Instant::now();
            let prep = PreparedTree::new(&tree)?;
            let mut g = Graph::new();
            let (_, tv) = model.encode_graph(&mut g, &prep)?;
            let scores = model.predict_graph(&mut g, tv, TaskKind::Classification)?;
            let loss = supervised_loss_graph(&mut g, scores, (t % 2) as f64, TaskKind::Classification)?;
            let grads = g.backward(loss)?;
            let pg = g.param_grads(&grads, &model.params);
            times[si].push(started.elapsed().as_secs_f64());
            std::hint::black_box(pg);
            branches[si] += prep.num_branches();
        }
    }
    let rows: Vec<BenchRow> = sizes
        .iter()
        .zip(times.iter().zip(&branches))
        .map(|(&n, (ts, &b))| {
            let (mean, std) = mean_std(ts);
            BenchRow { nodes: n, branches: b / trees_per_point, mean_seconds: mean, std_seconds: std }
        })
        .collect();
    let x: Vec<f64> = rows.iter().map(|r| r.nodes as f64).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.mean_seconds).collect();
    Ok(BenchReport { pearson_r: pearson(&x, &y)?, rows })
}
