//! Self-supervised objectives (partial ordering, subtree growth) and supervised losses.

use std::collections::HashSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{GtmpError, Result};
use crate::io::TaskKind;
use crate::model::GtmpModel;
use crate::tree::{distance, GeometricTree};

/// Gaussian radial bases `exp(-gamma (d - mu_k)^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialBasisConfig {
    pub mu: Vec<f64>,
    pub gamma: f64,
}

impl RadialBasisConfig {
    pub const DEFAULT_K: usize = 16;

    /// `k` centres evenly spaced over `[0, d_max]`, `gamma = 1 / (2 spacing^2)`.
    pub fn uniform(k: usize, d_max: f64) -> Result<Self> {
        if k < 2 || !(d_max.is_finite() && d_max > 0.0) {
            return Err(GtmpError::Config(format!("basis needs K >= 2 and d_max > 0 (K={k}, d_max={d_max})")));
        }
        let step = d_max / (k - 1) as f64;
        let mu = (0..k).map(|i| step * i as f64).collect();
        Ok(Self { mu, gamma: 1.0 / (2.0 * step * step) })
    }

    /// Uniform basis up to the 95th percentile of parent-child distances in `trees`.
    pub fn fit<'a>(trees: impl IntoIterator<Item = &'a GeometricTree>, k: usize) -> Result<Self> {
        let mut lengths = Vec::new();
        for t in trees {
            for v in 0..t.len() {
                if let Some(p) = t.parent(v) {
                    lengths.push(distance(&t.position(p), &t.position(v)));
                }
            }
        }
        if lengths.is_empty() {
            return Err(GtmpError::Config("no edges to fit a radial basis on".into()));
        }
        lengths.sort_by(f64::total_cmp);
        let rank = ((0.95 * lengths.len() as f64).ceil() as usize).clamp(1, lengths.len());
        Self::uniform(k, lengths[rank - 1])
    }

    pub fn k(&self) -> usize {
        self.mu.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu.len() < 2 {
            return Err(GtmpError::Config("basis needs K >= 2".into()));
        }
        if self.mu.iter().any(|m| !m.is_finite()) || self.mu.windows(2).any(|w| w[1] <= w[0]) {
            return Err(GtmpError::Config("basis centres must be finite and strictly increasing".into()));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(GtmpError::Config("basis gamma must be positive".into()));
        }
        Ok(())
    }

    /// Ground distance between consecutive bins, with a trailing 0 (the last CDF gap is always 0).
    pub fn cdf_weights(&self) -> Vec<f64> {
        let mut w: Vec<f64> = self.mu.windows(2).map(|p| p[1] - p[0]).collect();
        w.push(0.0);
        w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialHistogram {
    pub weights: Vec<f64>,
}

impl RadialHistogram {
    pub fn zeros(k: usize) -> Self {
        Self { weights: vec![0.0; k] }
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Unit-mass copy; a zero-mass histogram becomes uniform.
    pub fn normalized(&self) -> Vec<f64> {
        normalize_mass(&self.weights)
    }

    fn add_assign(&mut self, other: &RadialHistogram) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
    }
}

pub fn normalize_mass(w: &[f64]) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    if total > 0.0 {
        w.iter().map(|x| x / total).collect()
    } else {
        vec![1.0 / w.len() as f64; w.len()]
    }
}

pub fn rbf_expand(distances: &[f64], basis: &RadialBasisConfig) -> RadialHistogram {
    let weights = basis
        .mu
        .iter()
        .map(|mu| distances.iter().map(|d| (-basis.gamma * (d - mu).powi(2)).exp()).sum())
        .collect();
    RadialHistogram { weights }
}

pub fn child_distance_histogram(tree: &GeometricTree, node: usize, basis: &RadialBasisConfig) -> RadialHistogram {
    let here = tree.position(node);
    let d: Vec<f64> = tree.children(node).iter().map(|&c| distance(&here, &tree.position(c))).collect();
    rbf_expand(&d, basis)
}

/// Sum of child-distance histograms over `node` and all of its ancestors.
pub fn ancestor_context(tree: &GeometricTree, node: usize, basis: &RadialBasisConfig) -> RadialHistogram {
    let mut acc = child_distance_histogram(tree, node, basis);
    for a in tree.ancestors(node) {
        acc.add_assign(&child_distance_histogram(tree, a, basis));
    }
    acc
}

/// [`ancestor_context`] for every node, via one top-down pass.
pub fn all_ancestor_contexts(tree: &GeometricTree, basis: &RadialBasisConfig) -> Vec<RadialHistogram> {
    let mut out = vec![RadialHistogram::zeros(basis.k()); tree.len()];
    let mut stack = vec![tree.root()];
    while let Some(v) = stack.pop() {
        let mut h = child_distance_histogram(tree, v, basis);
        if let Some(p) = tree.parent(v) {
            h.add_assign(&out[p]);
        }
        out[v] = h;
        stack.extend_from_slice(tree.children(v));
    }
    out
}

/// 1-D earth mover's distance between unit-normalised histograms over the basis centres.
pub fn emd_1d(p: &RadialHistogram, q: &RadialHistogram, basis: &RadialBasisConfig) -> Result<f64> {
    emd_1d_weights(&p.weights, &q.weights, basis)
}

pub fn emd_1d_weights(p: &[f64], q: &[f64], basis: &RadialBasisConfig) -> Result<f64> {
    if p.len() != basis.k() || q.len() != basis.k() {
        return Err(GtmpError::Shape(format!("histograms of {} and {} bins, basis has {}", p.len(), q.len(), basis.k())));
    }
    let (pn, qn) = (normalize_mass(p), normalize_mass(q));
    let mut cdf = 0.0;
    let mut cost = 0.0;
    for (k, w) in basis.cdf_weights().iter().enumerate() {
        cdf += pn[k] - qn[k];
        cost += cdf.abs() * w;
    }
    Ok(cost)
}

/// Per-tree constants of the generative objective.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerativeTargets {
    /// Non-leaf nodes, in index order.
    pub internal: Vec<usize>,
    /// `[internal, K]` ancestor contexts.
    pub context: Tensor,
    /// `[internal, K]` normalised child-distance histograms.
    pub target: Tensor,
}

impl GenerativeTargets {
    pub fn new(tree: &GeometricTree, basis: &RadialBasisConfig) -> Result<Self> {
        basis.validate()?;
        let k = basis.k();
        let contexts = all_ancestor_contexts(tree, basis);
        let internal: Vec<usize> = (0..tree.len()).filter(|&v| !tree.is_leaf(v)).collect();
        let mut context = Vec::with_capacity(internal.len() * k);
        let mut target = Vec::with_capacity(internal.len() * k);
        for &v in &internal {
            context.extend_from_slice(&contexts[v].weights);
            target.extend(child_distance_histogram(tree, v, basis).normalized());
        }
        Ok(Self {
            context: Tensor::from_vec(internal.len(), k, context)?,
            target: Tensor::from_vec(internal.len(), k, target)?,
            internal,
        })
    }

    /// True when the tree has no internal node and the loss is vacuous.
    pub fn is_vacuous(&self) -> bool {
        self.internal.is_empty()
    }
}

/// Mean EMD between `softmax(logits)` rows and constant unit-mass target rows.
pub fn emd_rows_graph(g: &mut Graph, logits: Var, target: &Tensor, basis: &RadialBasisConfig) -> Result<Var> {
    if g.value(logits).shape() != target.shape() || target.cols() != basis.k() {
        return Err(GtmpError::Shape(format!(
            "EMD logits {:?}, targets {:?}, basis K={}",
            g.value(logits).shape(),
            target.shape(),
            basis.k()
        )));
    }
    let p = g.softmax(logits);
    let q = g.input(target.clone());
    let diff = g.sub(p, q)?;
    let cdf = g.cumsum_cols(diff);
    let gap = g.abs(cdf);
    let cost = g.mul_row(gap, &basis.cdf_weights())?;
    let per_row = g.sum_cols(cost);
    Ok(g.mean_rows(per_row))
}

/// Subtree-growth loss from final-layer embeddings `h`; 0 when the tree has no internal node.
pub fn generative_loss_graph(
    g: &mut Graph,
    model: &GtmpModel,
    h: Var,
    targets: &GenerativeTargets,
    basis: &RadialBasisConfig,
) -> Result<Var> {
    if model.generator_bins() != Some(basis.k()) {
        return Err(GtmpError::Contract(format!(
            "generative head has {:?} bins, basis has {}",
            model.generator_bins(),
            basis.k()
        )));
    }
    if targets.is_vacuous() {
        return Ok(g.input(Tensor::scalar(0.0)));
    }
    let hi = g.gather_rows(h, &targets.internal)?;
    let ctx = g.input(targets.context.clone());
    let x = g.concat_cols(&[hi, ctx])?;
    let logits = model.generator_graph(g, x)?;
    emd_rows_graph(g, logits, &targets.target, basis)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderReduction {
    /// `sum_b max(0, h_j[b] - h_i[b])`
    Sum,
    /// `||max(0, h_j - h_i)||^2`
    SquaredNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrderLossConfig {
    pub margin: f64,
    pub pairs_per_tree: usize,
    pub reduction: OrderReduction,
}

impl Default for OrderLossConfig {
    fn default() -> Self {
        Self { margin: 1.0, pairs_per_tree: 32, reduction: OrderReduction::Sum }
    }
}

impl OrderLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin.is_finite() && self.margin > 0.0) || self.pairs_per_tree == 0 {
            return Err(GtmpError::Config("order loss needs margin > 0 and pairs_per_tree >= 1".into()));
        }
        Ok(())
    }
}

/// `(i, j)` node index pairs: positives have `j` a proper descendant of `i`, negatives do not.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct OrderPairs {
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
}

impl OrderPairs {
    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Up to `pairs_per_tree` uniformly drawn distinct positive and negative pairs.
///
/// When a set has at most `pairs_per_tree` members, all of them are returned.
pub fn sample_order_pairs(tree: &GeometricTree, config: &OrderLossConfig, seed: u64) -> OrderPairs {
    let n = tree.len();
    let m = config.pairs_per_tree;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_pos: usize = (0..n).map(|v| tree.depth(v)).sum();
    let n_neg = n * n.saturating_sub(1) - n_pos;

    let positives = if n_pos <= m {
        let mut all = Vec::with_capacity(n_pos);
        for j in 0..n {
            for i in tree.ancestors(j) {
                all.push((i, j));
            }
        }
        all.sort_unstable();
        all
    } else {
        // Descendant weighted by its depth, then a uniform ancestor: uniform over pairs.
        let by_depth = WeightedIndex::new((0..n).map(|v| tree.depth(v))).expect("some node has depth > 0");
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(m);
        while out.len() < m {
            let j = by_depth.sample(&mut rng);
            let up = rng.random_range(1..=tree.depth(j));
            let i = tree.ancestors(j).nth(up - 1).expect("depth counts ancestors");
            if seen.insert((i, j)) {
                out.push((i, j));
            }
        }
        out
    };

    let is_neg = |i: usize, j: usize| i != j && !tree.is_proper_descendant(i, j);
    let negatives = if n_neg <= m {
        let mut all = Vec::with_capacity(n_neg);
        for i in 0..n {
            for j in 0..n {
                if is_neg(i, j) {
                    all.push((i, j));
                }
            }
        }
        all
    } else {
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(m);
        while out.len() < m {
            let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
            if is_neg(i, j) && seen.insert((i, j)) {
                out.push((i, j));
            }
        }
        out
    };
    OrderPairs { positives, negatives }
}

/// Graph handles of the order loss. `positive + negative == total`.
#[derive(Debug, Clone, Copy)]
pub struct OrderLossVars {
    pub positive: Var,
    pub negative: Var,
    pub total: Var,
}

pub fn order_loss_graph(g: &mut Graph, h: Var, pairs: &OrderPairs, config: &OrderLossConfig) -> Result<OrderLossVars> {
    if pairs.is_empty() {
        let z = g.input(Tensor::scalar(0.0));
        return Ok(OrderLossVars { positive: z, negative: z, total: z });
    }
    let inv = 1.0 / pairs.len() as f64;
    let (pi, pj): (Vec<usize>, Vec<usize>) = pairs.positives.iter().copied().unzip();
    let hi = g.gather_rows(h, &pi)?;
    let hj = g.gather_rows(h, &pj)?;
    let over = g.sub(hj, hi)?;
    let mut hinge = g.relu(over);
    if config.reduction == OrderReduction::SquaredNorm {
        hinge = g.square(hinge);
    }
    let pos_sum = g.sum_all(hinge);
    let positive = g.scale(pos_sum, inv);

    let (ni, nj): (Vec<usize>, Vec<usize>) = pairs.negatives.iter().copied().unzip();
    let hi = g.gather_rows(h, &ni)?;
    let hj = g.gather_rows(h, &nj)?;
    let diff = g.sub(hi, hj)?;
    let sq = g.square(diff);
    let dist2 = g.sum_cols(sq);
    let neg_d = g.scale(dist2, -1.0);
    let slack = g.add_scalar(neg_d, config.margin);
    let hinge = g.relu(slack);
    let neg_sum = g.sum_all(hinge);
    let negative = g.scale(neg_sum, inv);
    let total = g.add(positive, negative)?;
    Ok(OrderLossVars { positive, negative, total })
}

/// Value-only order loss on a `[nodes, D]` embedding matrix.
pub fn order_loss(h: &Tensor, pairs: &OrderPairs, config: &OrderLossConfig) -> Result<OrderTerms> {
    let mut g = Graph::new();
    let hv = g.input(h.clone());
    let v = order_loss_graph(&mut g, hv, pairs, config)?;
    Ok(OrderTerms {
        positive: g.value(v.positive).item(),
        negative: g.value(v.negative).item(),
        total: g.value(v.total).item(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderTerms {
    pub positive: f64,
    pub negative: f64,
    pub total: f64,
}

/// Combined self-supervised objective settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SslConfig {
    pub basis: RadialBasisConfig,
    #[serde(default)]
    pub order: OrderLossConfig,
    #[serde(default = "one")]
    pub generative_weight: f64,
    #[serde(default = "one")]
    pub order_weight: f64,
}

fn one() -> f64 {
    1.0
}

impl SslConfig {
    pub fn new(basis: RadialBasisConfig) -> Self {
        Self { basis, order: OrderLossConfig::default(), generative_weight: 1.0, order_weight: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        self.basis.validate()?;
        self.order.validate()?;
        if !(self.generative_weight.is_finite() && self.order_weight.is_finite()) {
            return Err(GtmpError::Config("loss weights must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SslLossVars {
    pub generative: Var,
    pub order: OrderLossVars,
    pub total: Var,
}

pub fn ssl_loss_graph(
    g: &mut Graph,
    model: &GtmpModel,
    h: Var,
    targets: &GenerativeTargets,
    pairs: &OrderPairs,
    config: &SslConfig,
) -> Result<SslLossVars> {
    let generative = generative_loss_graph(g, model, h, targets, &config.basis)?;
    let order = order_loss_graph(g, h, pairs, &config.order)?;
    let a = g.scale(generative, config.generative_weight);
    let b = g.scale(order.total, config.order_weight);
    let total = g.add(a, b)?;
    Ok(SslLossVars { generative, order, total })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SslTerms {
    pub generative: f64,
    pub order: OrderTerms,
    pub total: f64,
    /// Set when the tree has no internal node, so the generative term is vacuous.
    pub vacuous_generative: bool,
}

/// Encodes `tree` and evaluates the combined objective with pairs drawn from `seed`.
pub fn ssl_loss(model: &GtmpModel, tree: &GeometricTree, config: &SslConfig, seed: u64) -> Result<SslTerms> {
    config.validate()?;
    let prep = crate::model::PreparedTree::new(tree)?;
    let targets = GenerativeTargets::new(tree, &config.basis)?;
    let pairs = sample_order_pairs(tree, &config.order, seed);
    let mut g = Graph::new();
    let (layers, _) = model.encode_graph(&mut g, &prep)?;
    let v = ssl_loss_graph(&mut g, model, *layers.last().unwrap(), &targets, &pairs, config)?;
    Ok(SslTerms {
        generative: g.value(v.generative).item(),
        order: OrderTerms {
            positive: g.value(v.order.positive).item(),
            negative: g.value(v.order.negative).item(),
            total: g.value(v.order.total).item(),
        },
        total: g.value(v.total).item(),
        vacuous_generative: targets.is_vacuous(),
    })
}

fn class_index(target: f64, classes: usize) -> Result<usize> {
    if target.fract() != 0.0 || target < 0.0 || target >= classes as f64 {
        return Err(GtmpError::Contract(format!("label {target} outside 0..{classes}")));
    }
    Ok(target as usize)
}

/// Cross-entropy of a `1 x C` logit row, or absolute error of a `1 x 1` prediction.
pub fn supervised_loss_graph(g: &mut Graph, scores: Var, target: f64, kind: TaskKind) -> Result<Var> {
    let shape = g.value(scores).shape();
    if shape[0] != 1 || shape[1] == 0 {
        return Err(GtmpError::Shape(format!("scores must be a single row, got {shape:?}")));
    }
    match kind {
        TaskKind::Classification => {
            let c = class_index(target, shape[1])?;
            let ls = g.log_softmax(scores);
            let picked = g.pick(ls, &[(0, c)])?;
            Ok(g.scale(picked, -1.0))
        }
        TaskKind::Regression => {
            if shape[1] != 1 {
                return Err(GtmpError::Contract(format!("regression expects one score, got {}", shape[1])));
            }
            if !target.is_finite() {
                return Err(GtmpError::Contract("regression target must be finite".into()));
            }
            let shifted = g.add_scalar(scores, -target);
            Ok(g.abs(shifted))
        }
    }
}

pub fn supervised_loss(scores: &[f64], target: f64, kind: TaskKind) -> Result<f64> {
    let mut g = Graph::new();
    let s = g.input(Tensor::row(scores));
    let l = supervised_loss_graph(&mut g, s, target, kind)?;
    Ok(g.value(l).item())
}

/// One row of a loss curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: usize,
    pub generative: f64,
    pub order: f64,
    pub total: f64,
}

pub fn loss_curve_csv(rows: &[LossRow]) -> String {
    let mut s = String::from("step,generative,order,total\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{}\n", r.step, r.generative, r.order, r.total));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::NodeRecord;

    fn tree_from(parents: &[Option<usize>], pos: &[[f64; 3]]) -> GeometricTree {
        let nodes = parents
            .iter()
            .zip(pos)
            .enumerate()
            .map(|(i, (p, x))| NodeRecord { id: i as i64, parent: p.map(|q| q as i64), position: *x, attrs: vec![] })
            .collect();
        GeometricTree::new(nodes, None).unwrap()
    }

    fn basis4() -> RadialBasisConfig {
        RadialBasisConfig::uniform(4, 3.0).unwrap()
    }

    #[test]
    fn rbf_at_a_centre() {
        let b = basis4();
        let h = rbf_expand(&[2.0], &b);
        assert_eq!(h.weights[2], 1.0);
        let tail = (-b.gamma).exp();
        assert!((h.weights[1] - tail).abs() < 1e-15 && (h.weights[3] - tail).abs() < 1e-15);
        assert_eq!(rbf_expand(&[], &b).weights, vec![0.0; 4]);
    }

    #[test]
    fn emd_one_bin_shift_and_identity() {
        let b = basis4();
        let p = RadialHistogram { weights: vec![1.0, 0.0, 0.0, 0.0] };
        let q = RadialHistogram { weights: vec![0.0, 1.0, 0.0, 0.0] };
        assert!((emd_1d(&p, &q, &b).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(emd_1d(&p, &p, &b).unwrap(), 0.0);
        let zero = RadialHistogram::zeros(4);
        let uniform = RadialHistogram { weights: vec![2.0; 4] };
        assert_eq!(emd_1d(&zero, &uniform, &b).unwrap(), 0.0);
    }

    #[test]
    fn contexts_accumulate_along_the_path() {
        let t = tree_from(&[None, Some(0), Some(1), Some(0)], &[[0.0; 3], [1.0, 0.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 3.0]]);
        let b = basis4();
        assert_eq!(ancestor_context(&t, 0, &b), child_distance_histogram(&t, 0, &b));
        let all = all_ancestor_contexts(&t, &b);
        for v in 0..4 {
            let direct = ancestor_context(&t, v, &b);
            for (x, y) in direct.weights.iter().zip(&all[v].weights) {
                assert!((x - y).abs() < 1e-14);
            }
        }
        assert_eq!(child_distance_histogram(&t, 2, &b).weights, vec![0.0; 4]);
    }

    #[test]
    fn star_and_path_pairs() {
        let path = tree_from(&[None, Some(0), Some(1)], &[[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        let pairs = sample_order_pairs(&path, &OrderLossConfig::default(), 0);
        assert_eq!(pairs.positives, vec![(0, 1), (0, 2), (1, 2)]);
        assert_eq!(pairs.negatives, vec![(1, 0), (2, 0), (2, 1)]);

        let star = tree_from(
            &[None, Some(0), Some(0), Some(0)],
            &[[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        );
        let pairs = sample_order_pairs(&star, &OrderLossConfig::default(), 0);
        assert_eq!(pairs.positives.len(), 3);
        for &(i, j) in &pairs.negatives {
            assert!(i != 0 && (j == 0 || j != i));
        }
        assert_eq!(pairs.negatives.len(), 9);
    }

    #[test]
    fn hand_order_pair() {
        let h = Tensor::from_vec(2, 2, vec![1.0, 0.0, 2.0, -1.0]).unwrap();
        let pairs = OrderPairs { positives: vec![(0, 1)], negatives: vec![] };
        let t = order_loss(&h, &pairs, &OrderLossConfig::default()).unwrap();
        assert_eq!(t.positive, 1.0);
        assert_eq!(t.total, 1.0);
        let pairs = OrderPairs { positives: vec![], negatives: vec![(0, 1)] };
        assert_eq!(order_loss(&h, &pairs, &OrderLossConfig::default()).unwrap().total, 0.0);
    }

    #[test]
    fn supervised_contracts() {
        assert!(supervised_loss(&[50.0, -50.0], 0.0, TaskKind::Classification).unwrap() < 1e-40);
        assert_eq!(supervised_loss(&[2.5], 2.5, TaskKind::Regression).unwrap(), 0.0);
        assert!(matches!(supervised_loss(&[0.0, 1.0], 2.0, TaskKind::Classification), Err(GtmpError::Contract(_))));
        assert!(matches!(supervised_loss(&[0.0, 1.0], 0.5, TaskKind::Classification), Err(GtmpError::Contract(_))));
    }
}
