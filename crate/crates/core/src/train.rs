//! Supervised training, self-supervised pretraining and finetuning loops.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamState, Graph, ParamSet, Tensor};
use crate::error::{GtmpError, Result};
use crate::io::{DatasetManifest, TaskKind};
use crate::metrics::{auc, mae};
use crate::model::{is_encoder_param, EncoderConfig, GtmpModel, ModelConfig, PreparedTree, TaskSpec};
use crate::objectives::{
    sample_order_pairs, ssl_loss_graph, supervised_loss_graph, GenerativeTargets, OrderLossConfig, OrderPairs,
    RadialBasisConfig, SslConfig,
};
use crate::synth::SyntheticSample;
use crate::tree::GeometricTree;

/// Trees with optional per-tree targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub trees: Vec<GeometricTree>,
    pub targets: Vec<Option<f64>>,
    pub task: TaskKind,
}

impl Dataset {
    pub fn new(trees: Vec<GeometricTree>, targets: Vec<Option<f64>>, task: TaskKind) -> Result<Self> {
        if trees.len() != targets.len() {
            return Err(GtmpError::Config(format!("{} trees but {} targets", trees.len(), targets.len())));
        }
        Ok(Self { trees, targets, task })
    }

    pub fn from_samples(samples: &[SyntheticSample], task: TaskKind) -> Self {
        let trees = samples.iter().map(|s| s.tree.clone()).collect();
        let targets = samples
            .iter()
            .map(|s| match task {
                TaskKind::Classification => s.class.map(|c| c as f64),
                TaskKind::Regression => Some(s.diameter),
            })
            .collect();
        Self { trees, targets, task }
    }

    pub fn from_manifest(manifest: &DatasetManifest, base: &std::path::Path) -> Result<Self> {
        let loaded = manifest.load_trees(base)?;
        let (trees, targets) = loaded.into_iter().unzip();
        Self::new(trees, targets, manifest.task_kind)
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    /// Number of classes implied by integer labels (max label + 1).
    pub fn num_classes(&self) -> Result<usize> {
        let mut max = None::<usize>;
        for t in self.targets.iter().flatten() {
            if t.fract() != 0.0 || *t < 0.0 {
                return Err(GtmpError::Config(format!("class label {t} is not a non-negative integer")));
            }
            max = Some(max.map_or(*t as usize, |m| m.max(*t as usize)));
        }
        Ok(max.map_or(0, |m| m + 1).max(2))
    }
}

/// Disjoint train / validation / test index sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Deterministic shuffled split; depends only on `(n, ratios, seed)`.
pub fn split_indices(n: usize, ratios: [f64; 3], seed: u64) -> Result<Splits> {
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(GtmpError::Config(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let a = (ratios[0] * n as f64).round() as usize;
    let b = (((ratios[0] + ratios[1]) * n as f64).round() as usize).clamp(a, n);
    Ok(Splits { train: idx[..a].to_vec(), val: idx[a..b].to_vec(), test: idx[b..].to_vec() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Supervised,
    Pretrain,
    Finetune,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning-rate multiplier applied when validation loss stalls for `patience` epochs.
    pub decay_ratio: f64,
    pub patience: usize,
    pub split_ratios: [f64; 3],
    pub split_seed: u64,
    /// Seeds initialisation, batch order and pair sampling.
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub order: OrderLossConfig,
    pub basis_k: usize,
    /// Fitted on the training split when absent.
    pub basis: Option<RadialBasisConfig>,
    pub generative_weight: f64,
    pub order_weight: f64,
    /// Keep encoder weights fixed while finetuning.
    pub freeze_encoder: bool,
    /// Fraction of the training split whose labels are used.
    pub label_fraction: f64,
    /// Inferred from labels when absent.
    pub num_classes: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Supervised,
            epochs: 100,
            batch_size: 16,
            lr: 1e-3,
            decay_ratio: 0.9,
            patience: 10,
            split_ratios: [0.8, 0.1, 0.1],
            split_seed: 0,
            seed: 0,
            encoder: EncoderConfig::default(),
            order: OrderLossConfig::default(),
            basis_k: RadialBasisConfig::DEFAULT_K,
            basis: None,
            generative_weight: 1.0,
            order_weight: 1.0,
            freeze_encoder: false,
            label_fraction: 1.0,
            num_classes: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GtmpError::Config(m.into()));
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return bad("epochs, batch_size and patience must be positive");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) || !(self.decay_ratio > 0.0 && self.decay_ratio <= 1.0) {
            return bad("lr must be positive and decay_ratio in (0, 1]");
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return bad("label_fraction must be in (0, 1]");
        }
        self.encoder.validate()?;
        self.order.validate()?;
        if let Some(b) = &self.basis {
            b.validate()?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    #[serde(default)]
    pub train_generative: Option<f64>,
    #[serde(default)]
    pub train_order: Option<f64>,
    /// Fraction of sampled ancestor/descendant pairs on validation trees violating containment.
    #[serde(default)]
    pub val_violation_rate: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestMetric {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: TrainMode,
    pub seed: u64,
    pub config: TrainConfig,
    pub split_sizes: [usize; 3],
    /// Training trees whose labels were used.
    pub train_used: usize,
    pub initial_val_loss: f64,
    #[serde(default)]
    pub initial_val_violation_rate: Option<f64>,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub test_metric: Option<TestMetric>,
    #[serde(default)]
    pub basis: Option<RadialBasisConfig>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    /// Every recorded number except wall-clock times.
    pub fn metrics_fingerprint(&self) -> Vec<f64> {
        let mut v = vec![self.initial_val_loss, self.best_val_loss, self.best_epoch as f64];
        v.extend(self.initial_val_violation_rate);
        for e in &self.epochs {
            v.extend([e.lr, e.train_loss, e.val_loss]);
            v.extend(e.train_generative.iter().chain(&e.train_order).chain(&e.val_violation_rate));
        }
        v.extend(self.test_metric.as_ref().map(|m| m.value));
        v
    }

    /// Metrics CSV: one row per epoch.
    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("epoch,lr,train_loss,val_loss,train_generative,train_order,val_violation_rate,seconds\n");
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                e.epoch,
                e.lr,
                e.train_loss,
                e.val_loss,
                opt(e.train_generative),
                opt(e.train_order),
                opt(e.val_violation_rate),
                e.seconds
            ));
        }
        s
    }
}

/// Multiplies the learning rate by `decay` after `patience` epochs without a new best validation loss.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauSchedule {
    lr: f64,
    decay: f64,
    patience: usize,
    best: f64,
    stall: usize,
}

impl PlateauSchedule {
    pub fn new(lr: f64, decay: f64, patience: usize, initial_loss: f64) -> Self {
        Self { lr, decay, patience, best: initial_loss, stall: 0 }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Records one epoch's validation loss; true when it is a new best.
    pub fn observe(&mut self, val_loss: f64) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.stall = 0;
            return true;
        }
        self.stall += 1;
        if self.stall >= self.patience {
            self.lr *= self.decay;
            self.stall = 0;
        }
        false
    }
}

fn mix(a: u64, b: u64) -> u64 {
    // splitmix64 finaliser over a combined word
    let mut z = a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_add(0x632b_e59b_d9b4_e5f5);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One tree with everything its loss needs, computed once.
struct Item {
    tree_index: usize,
    tree: GeometricTree,
    prep: PreparedTree,
    target: Option<f64>,
    gen: Option<GenerativeTargets>,
}

#[derive(Clone, Copy)]
enum Objective<'a> {
    Supervised(TaskKind),
    Ssl(&'a SslConfig),
}

struct ItemOut {
    loss: f64,
    generative: f64,
    order: f64,
    violations: (usize, usize),
    grads: Option<Vec<Tensor>>,
}

fn par_map<T: Send>(idx: &[usize], f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        idx.par_iter().map(|&i| f(i)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        idx.iter().map(|&i| f(i)).collect()
    }
}

fn violation_count(h: &Tensor, pairs: &OrderPairs) -> (usize, usize) {
    let bad = pairs
        .positives
        .iter()
        .filter(|&&(i, j)| h.row_slice(j).iter().zip(h.row_slice(i)).any(|(a, b)| a > b))
        .count();
    (bad, pairs.positives.len())
}

fn item_loss(model: &GtmpModel, item: &Item, obj: Objective, pair_seed: u64, with_grads: bool) -> Result<ItemOut> {
    let mut g = Graph::new();
    let (layers, tv) = model.encode_graph(&mut g, &item.prep)?;
    let (loss, generative, order, violations) = match obj {
        Objective::Supervised(kind) => {
            let target = item.target.ok_or_else(|| GtmpError::Config(format!("tree {} has no target", item.tree_index)))?;
            let scores = model.predict_graph(&mut g, tv, kind)?;
            (supervised_loss_graph(&mut g, scores, target, kind)?, f64::NAN, f64::NAN, (0, 0))
        }
        Objective::Ssl(cfg) => {
            let pairs = sample_order_pairs(&item.tree, &cfg.order, pair_seed);
            let h = *layers.last().unwrap();
            let gen = item.gen.as_ref().expect("ssl items carry generative targets");
            let v = ssl_loss_graph(&mut g, model, h, gen, &pairs, cfg)?;
            let viol = violation_count(g.value(h), &pairs);
            (v.total, g.value(v.generative).item(), g.value(v.order.total).item(), viol)
        }
    };
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(GtmpError::Numeric(format!("non-finite loss {value} on tree {}", item.tree_index)));
    }
    let grads = if with_grads {
        let gr = g.backward(loss)?;
        Some(g.param_grads(&gr, &model.params))
    } else {
        None
    };
    Ok(ItemOut { loss: value, generative, order, violations, grads })
}

fn prepare(dataset: &Dataset, indices: &[usize], basis: Option<&RadialBasisConfig>) -> Result<Vec<Item>> {
    let all: Vec<usize> = (0..indices.len()).collect();
    par_map(&all, |q| {
        let t = indices[q];
        let tree = dataset.trees[t].clone();
        Ok(Item {
            tree_index: t,
            prep: PreparedTree::new(&tree)?,
            target: dataset.targets[t],
            gen: basis.map(|b| GenerativeTargets::new(&tree, b)).transpose()?,
            tree,
        })
    })
}

struct LoopResult {
    best: ParamSet,
    epochs: Vec<EpochRecord>,
    best_epoch: usize,
    best_val: f64,
    initial_val: f64,
    initial_violation: Option<f64>,
}

fn evaluate_items(model: &GtmpModel, items: &[Item], obj: Objective, seed: u64) -> Result<(f64, Option<f64>)> {
    let all: Vec<usize> = (0..items.len()).collect();
    let outs = par_map(&all, |q| item_loss(model, &items[q], obj, mix(seed, items[q].tree_index as u64), false))?;
    let loss = outs.iter().map(|o| o.loss).sum::<f64>() / outs.len() as f64;
    let viol = match obj {
        Objective::Ssl(_) => {
            let (bad, total) = outs.iter().fold((0, 0), |a, o| (a.0 + o.violations.0, a.1 + o.violations.1));
            Some(if total == 0 { 0.0 } else { bad as f64 / total as f64 })
        }
        Objective::Supervised(_) => None,
    };
    Ok((loss, viol))
}

fn run_loop(
    model: &mut GtmpModel,
    train: &[Item],
    val: &[Item],
    obj: Objective,
    cfg: &TrainConfig,
    trainable: Option<&[bool]>,
) -> Result<LoopResult> {
    let val_seed = mix(cfg.seed, 0x7661_6c00);
    let (initial_val, initial_violation) = evaluate_items(model, val, obj, val_seed)?;
    let mut state = AdamState::new(&model.params);
    let mut schedule = PlateauSchedule::new(cfg.lr, cfg.decay_ratio, cfg.patience, initial_val);
    let mut best = model.params.clone();
    let mut best_epoch = 0;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch as u64)));
        let (mut sum_loss, mut sum_gen, mut sum_order) = (0.0, 0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let snapshot: &GtmpModel = model;
            let outs = par_map(batch, |q| {
                let seed = mix(mix(cfg.seed, epoch as u64), train[q].tree_index as u64);
                item_loss(snapshot, &train[q], obj, seed, true)
            })?;
            let mut total: Vec<Tensor> = model.params.names().iter().map(|n| {
                let t = model.params.get(n).unwrap();
                Tensor::zeros(t.rows(), t.cols())
            }).collect();
            for o in &outs {
                sum_loss += o.loss;
                sum_gen += o.generative;
                sum_order += o.order;
                for (acc, g) in total.iter_mut().zip(o.grads.as_ref().unwrap()) {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
            }
            let inv = 1.0 / batch.len() as f64;
            for t in &mut total {
                t.data_mut().iter_mut().for_each(|x| *x *= inv);
            }
            adam_step(&mut model.params, &total, &mut state, schedule.lr(), trainable);
        }
        let n = train.len() as f64;
        let (val_loss, viol) = evaluate_items(model, val, obj, val_seed)?;
        let ssl = matches!(obj, Objective::Ssl(_));
        epochs.push(EpochRecord {
            epoch,
            lr: schedule.lr(),
            train_loss: sum_loss / n,
            val_loss,
            train_generative: ssl.then_some(sum_gen / n),
            train_order: ssl.then_some(sum_order / n),
            val_violation_rate: viol,
            seconds: started.elapsed().as_secs_f64(),
        });
        if schedule.observe(val_loss) {
            best_epoch = epoch;
            best = model.params.clone();
        }
    }
    Ok(LoopResult { best, epochs, best_epoch, best_val: schedule.best(), initial_val, initial_violation })
}

/// Predictions of a supervised model on `trees`: class-1 probability (binary),
/// the full probability row (multi-class) or the regression value.
pub fn predict_scores(model: &GtmpModel, trees: &[&GeometricTree]) -> Result<Vec<Vec<f64>>> {
    let task = model.config.task.ok_or_else(|| GtmpError::Contract("model has no task head".into()))?;
    let all: Vec<usize> = (0..trees.len()).collect();
    par_map(&all, |q| {
        let out = model.score(&PreparedTree::new(trees[q])?)?;
        Ok(match task.kind {
            TaskKind::Classification => softmax(&out),
            TaskKind::Regression => out,
        })
    })
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

/// AUC (classification; macro one-vs-rest beyond two classes) or MAE (regression).
pub fn evaluate_metric(model: &GtmpModel, trees: &[&GeometricTree], targets: &[f64]) -> Result<TestMetric> {
    let task = model.config.task.ok_or_else(|| GtmpError::Contract("model has no task head".into()))?;
    let preds = predict_scores(model, trees)?;
    match task.kind {
        TaskKind::Regression => {
            let p: Vec<f64> = preds.iter().map(|r| r[0]).collect();
            Ok(TestMetric { name: "mae".into(), value: mae(&p, targets)? })
        }
        TaskKind::Classification => {
            let classes: Vec<usize> = if task.num_classes == 2 { vec![1] } else { (0..task.num_classes).collect() };
            let mut aucs = Vec::new();
            for c in classes {
                let s: Vec<f64> = preds.iter().map(|r| r[c]).collect();
                let l: Vec<bool> = targets.iter().map(|&t| t == c as f64).collect();
                aucs.push(auc(&s, &l)?);
            }
            Ok(TestMetric { name: "auc".into(), value: aucs.iter().sum::<f64>() / aucs.len() as f64 })
        }
    }
}

fn require_nonempty(splits: &Splits) -> Result<()> {
    if splits.train.is_empty() || splits.val.is_empty() {
        return Err(GtmpError::Config(format!(
            "empty split: {} train, {} validation trees",
            splits.train.len(),
            splits.val.len()
        )));
    }
    Ok(())
}

fn labelled_subset(splits: &Splits, fraction: f64) -> Vec<usize> {
    let keep = ((fraction * splits.train.len() as f64).ceil() as usize).clamp(1, splits.train.len());
    splits.train[..keep].to_vec()
}

fn supervised_run(mut model: GtmpModel, dataset: &Dataset, config: &TrainConfig, trainable: Option<&[bool]>) -> Result<(GtmpModel, RunReport)> {
    let splits = split_indices(dataset.len(), config.split_ratios, config.split_seed)?;
    require_nonempty(&splits)?;
    let train_idx = labelled_subset(&splits, config.label_fraction);
    let train = prepare(dataset, &train_idx, None)?;
    let val = prepare(dataset, &splits.val, None)?;
    let obj = Objective::Supervised(dataset.task);
    let res = run_loop(&mut model, &train, &val, obj, config, trainable)?;
    model.params = res.best;
    let test_metric = if splits.test.is_empty() {
        None
    } else {
        let trees: Vec<&GeometricTree> = splits.test.iter().map(|&i| &dataset.trees[i]).collect();
        let targets: Vec<f64> = splits
            .test
            .iter()
            .map(|&i| dataset.targets[i].ok_or_else(|| GtmpError::Config(format!("tree {i} has no target"))))
            .collect::<Result<_>>()?;
        Some(evaluate_metric(&model, &trees, &targets)?)
    };
    let report = RunReport {
        mode: config.mode,
        seed: config.seed,
        config: config.clone(),
        split_sizes: [splits.train.len(), splits.val.len(), splits.test.len()],
        train_used: train_idx.len(),
        initial_val_loss: res.initial_val,
        initial_val_violation_rate: None,
        epochs: res.epochs,
        best_epoch: res.best_epoch,
        best_val_loss: res.best_val,
        test_metric,
        basis: None,
    };
    Ok((model, report))
}

fn task_spec(dataset: &Dataset, config: &TrainConfig) -> Result<TaskSpec> {
    let num_classes = match dataset.task {
        TaskKind::Classification => config.num_classes.map_or_else(|| dataset.num_classes(), Ok)?,
        TaskKind::Regression => 0,
    };
    Ok(TaskSpec { kind: dataset.task, num_classes })
}

/// Trains encoder and head from scratch on the labelled dataset.
pub fn train_supervised(dataset: &Dataset, config: &TrainConfig) -> Result<(GtmpModel, RunReport)> {
    config.validate()?;
    let mut encoder = config.encoder.clone();
    encoder.attr_dim = attr_width(dataset)?;
    let task = task_spec(dataset, config)?;
    let model = GtmpModel::new(ModelConfig { encoder, task: Some(task), generator_bins: None }, mix(config.seed, 1))?;
    supervised_run(model, dataset, config, None)
}

fn attr_width(dataset: &Dataset) -> Result<usize> {
    let w = dataset.trees.first().map_or(0, |t| t.attr_width());
    if dataset.trees.iter().any(|t| t.attr_width() != w) {
        return Err(GtmpError::Config("trees disagree on attribute width".into()));
    }
    Ok(w)
}

/// Optimises the combined self-supervised loss; returns the encoder alone.
pub fn pretrain_ssl(dataset: &Dataset, config: &TrainConfig) -> Result<(GtmpModel, RunReport)> {
    config.validate()?;
    if dataset.trees.iter().all(|t| t.len() < 2) {
        return Err(GtmpError::Config("every tree is a single node; nothing to pretrain on".into()));
    }
    let splits = split_indices(dataset.len(), config.split_ratios, config.split_seed)?;
    require_nonempty(&splits)?;
    let basis = match &config.basis {
        Some(b) => b.clone(),
        None => RadialBasisConfig::fit(splits.train.iter().map(|&i| &dataset.trees[i]), config.basis_k)?,
    };
    let ssl = SslConfig {
        basis: basis.clone(),
        order: config.order,
        generative_weight: config.generative_weight,
        order_weight: config.order_weight,
    };
    let mut encoder = config.encoder.clone();
    encoder.attr_dim = attr_width(dataset)?;
    let mc = ModelConfig { encoder: encoder.clone(), task: None, generator_bins: Some(basis.k()) };
    let mut model = GtmpModel::new(mc, mix(config.seed, 1))?;
    let train = prepare(dataset, &splits.train, Some(&basis))?;
    let val = prepare(dataset, &splits.val, Some(&basis))?;
    let res = run_loop(&mut model, &train, &val, Objective::Ssl(&ssl), config, None)?;
    model.params = res.best;

    let test_metric = if splits.test.is_empty() {
        None
    } else {
        let test = prepare(dataset, &splits.test, Some(&basis))?;
        let (loss, _) = evaluate_items(&model, &test, Objective::Ssl(&ssl), mix(config.seed, 0x7465_7374))?;
        Some(TestMetric { name: "ssl_loss".into(), value: loss })
    };
    let mut enc_only = GtmpModel::new(ModelConfig { encoder, task: None, generator_bins: None }, 0)?;
    enc_only.params.load_matching(&model.params, is_encoder_param)?;
    let report = RunReport {
        mode: TrainMode::Pretrain,
        seed: config.seed,
        config: config.clone(),
        split_sizes: [splits.train.len(), splits.val.len(), splits.test.len()],
        train_used: splits.train.len(),
        initial_val_loss: res.initial_val,
        initial_val_violation_rate: res.initial_violation,
        epochs: res.epochs,
        best_epoch: res.best_epoch,
        best_val_loss: res.best_val,
        test_metric,
        basis: Some(basis),
    };
    Ok((enc_only, report))
}

/// Initialises the encoder from `encoder`, attaches a fresh head and trains as [`train_supervised`].
pub fn finetune(encoder: &GtmpModel, dataset: &Dataset, config: &TrainConfig) -> Result<(GtmpModel, RunReport)> {
    config.validate()?;
    let mut expected = config.encoder.clone();
    expected.attr_dim = attr_width(dataset)?;
    if encoder.encoder_config() != &expected {
        return Err(GtmpError::Checkpoint(format!(
            "checkpoint encoder {:?} does not match configured encoder {:?}",
            encoder.encoder_config(),
            expected
        )));
    }
    let task = task_spec(dataset, config)?;
    let model = encoder.with_new_head(task, mix(config.seed, 2))?;
    let mask: Vec<bool> = model.encoder_mask().iter().map(|&e| !e).collect();
    let trainable = config.freeze_encoder.then_some(mask.as_slice());
    supervised_run(model, dataset, config, trainable)
}
