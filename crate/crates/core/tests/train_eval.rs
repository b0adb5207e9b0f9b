use gtmp::eval::{bench_scaling, invariance_test, model_scalar_score, with_coordinate_attrs};
use gtmp::io::TaskKind;
use gtmp::metrics::auc;
use gtmp::model::{is_encoder_param, EncoderConfig, GtmpModel, ModelConfig, PreparedTree, TaskSpec};
use gtmp::synth::{generate_synthetic, GeneratorConfig};
use gtmp::train::{
    evaluate_metric, finetune, predict_scores, pretrain_ssl, split_indices, train_supervised, Dataset, PlateauSchedule,
    TrainConfig, TrainMode,
};
use gtmp::tree::GeometricTree;
use gtmp::GtmpError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_dataset(count: usize, seed: u64, task: TaskKind) -> Dataset {
    let cfg = GeneratorConfig { count, min_depth: 5, max_depth: 6, ..GeneratorConfig::default() };
    Dataset::from_samples(&generate_synthetic(&cfg, seed).unwrap(), task)
}

fn small_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 8,
        lr: 3e-3,
        encoder: EncoderConfig { hidden_dim: 12, num_layers: 2, ..EncoderConfig::default() },
        ..TrainConfig::default()
    }
}

/// O(n^2) pair count: P(score_pos > score_neg) + 0.5 P(tie).
fn auc_oracle(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (a, &la) in scores.iter().zip(labels) {
        for (b, &lb) in scores.iter().zip(labels) {
            if la && !lb {
                den += 1.0;
                num += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
            }
        }
    }
    num / den
}

#[test]
fn auc_matches_pair_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let n = rng.random_range(2..60);
        // Coarse scores force ties.
        let scores: Vec<f64> = (0..n).map(|_| (rng.random_range(0.0..1.0f64) * 6.0).floor()).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        assert!((auc(&scores, &labels).unwrap() - auc_oracle(&scores, &labels)).abs() < 1e-12);
    }
}

#[test]
fn training_is_deterministic_and_seed_sensitive() {
    let data = small_dataset(30, 1, TaskKind::Classification);
    let cfg = small_config(3);
    let (m1, r1) = train_supervised(&data, &cfg).unwrap();
    let (m2, r2) = train_supervised(&data, &cfg).unwrap();
    assert_eq!(r1.metrics_fingerprint(), r2.metrics_fingerprint());
    assert_eq!(m1.params, m2.params);
    let (_, r3) = train_supervised(&data, &TrainConfig { seed: 5, ..cfg }).unwrap();
    assert_ne!(r1.metrics_fingerprint(), r3.metrics_fingerprint());
    assert_eq!(r1.split_sizes, [24, 3, 3]);
    assert_eq!(r1.epochs.len(), 3);
}

#[test]
fn full_batch_regression_loss_decreases() {
    let data = small_dataset(30, 2, TaskKind::Regression);
    let cfg = TrainConfig { batch_size: 64, lr: 1e-3, ..small_config(10) };
    let (_, report) = train_supervised(&data, &cfg).unwrap();
    let losses: Vec<f64> = report.epochs.iter().map(|e| e.train_loss).collect();
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "train loss {losses:?}");
    }
    let metric = report.test_metric.unwrap();
    assert_eq!(metric.name, "mae");
}

#[test]
fn reported_metrics_match_direct_evaluation() {
    let data = small_dataset(40, 3, TaskKind::Classification);
    let cfg = small_config(4);
    let (model, report) = train_supervised(&data, &cfg).unwrap();
    let splits = split_indices(40, cfg.split_ratios, cfg.split_seed).unwrap();
    let trees: Vec<&GeometricTree> = splits.test.iter().map(|&i| &data.trees[i]).collect();
    let targets: Vec<f64> = splits.test.iter().map(|&i| data.targets[i].unwrap()).collect();
    let probs: Vec<f64> = predict_scores(&model, &trees).unwrap().iter().map(|r| r[1]).collect();
    let labels: Vec<bool> = targets.iter().map(|&t| t == 1.0).collect();
    let want = auc_oracle(&probs, &labels);
    assert!((report.test_metric.unwrap().value - want).abs() < 1e-12);
    assert!((evaluate_metric(&model, &trees, &targets).unwrap().value - want).abs() < 1e-12);

    let reg = small_dataset(40, 3, TaskKind::Regression);
    let (model, report) = train_supervised(&reg, &small_config(2)).unwrap();
    let preds = predict_scores(&model, &trees_of(&reg, &splits.test)).unwrap();
    let mae: f64 = splits.test.iter().zip(&preds).map(|(&i, p)| (p[0] - reg.targets[i].unwrap()).abs()).sum::<f64>()
        / splits.test.len() as f64;
    assert!((report.test_metric.unwrap().value - mae).abs() < 1e-12);
}

fn trees_of<'a>(d: &'a Dataset, idx: &[usize]) -> Vec<&'a GeometricTree> {
    idx.iter().map(|&i| &d.trees[i]).collect()
}

#[test]
fn best_checkpoint_is_kept() {
    let data = small_dataset(30, 4, TaskKind::Classification);
    let (model, report) = train_supervised(&data, &small_config(6)).unwrap();
    let best = report.epochs.iter().map(|e| e.val_loss).fold(report.initial_val_loss, f64::min);
    assert_eq!(report.best_val_loss, best);
    // Re-evaluating the returned weights on the validation split reproduces the best loss.
    let splits = split_indices(30, [0.8, 0.1, 0.1], 0).unwrap();
    let mut total = 0.0;
    for &i in &splits.val {
        let s = model.score(&PreparedTree::new(&data.trees[i]).unwrap()).unwrap();
        total += gtmp::objectives::supervised_loss(&s, data.targets[i].unwrap(), TaskKind::Classification).unwrap();
    }
    assert!((total / splits.val.len() as f64 - best).abs() < 1e-12);
}

#[test]
fn plateau_schedule_sequence() {
    let mut s = PlateauSchedule::new(0.1, 0.5, 2, 1.0);
    let seen: Vec<(bool, f64)> = [0.9, 0.95, 0.95, 0.92, 0.93, 0.8].iter().map(|&v| (s.observe(v), s.lr())).collect();
    assert_eq!(seen, vec![(true, 0.1), (false, 0.1), (false, 0.05), (false, 0.05), (false, 0.025), (true, 0.025)]);
}

#[test]
fn pretraining_reduces_both_terms_and_violations() {
    let data = small_dataset(30, 5, TaskKind::Classification);
    let cfg = TrainConfig { mode: TrainMode::Pretrain, ..small_config(30) };
    let (encoder, report) = pretrain_ssl(&data, &cfg).unwrap();
    let first = &report.epochs[0];
    let last = report.epochs.last().unwrap();
    assert!(last.train_generative.unwrap() < first.train_generative.unwrap());
    assert!(last.train_order.unwrap() < first.train_order.unwrap());
    assert!(report.best_val_loss < report.initial_val_loss);
    assert!(last.val_violation_rate.unwrap() < report.initial_val_violation_rate.unwrap());
    assert!(encoder.params.names().iter().all(|n| is_encoder_param(n)));
    assert_eq!(report.basis.as_ref().unwrap().k(), 16);
    assert_eq!(report.test_metric.unwrap().name, "ssl_loss");
}

#[test]
fn finetuning_freezes_or_rejects_encoders() {
    let data = small_dataset(30, 6, TaskKind::Classification);
    let cfg = small_config(2);
    let (encoder, _) = pretrain_ssl(&data, &TrainConfig { mode: TrainMode::Pretrain, ..cfg.clone() }).unwrap();
    let frozen = TrainConfig { mode: TrainMode::Finetune, freeze_encoder: true, ..cfg.clone() };
    let (model, _) = finetune(&encoder, &data, &frozen).unwrap();
    for name in encoder.params.names() {
        let (a, b) = (encoder.params.get(name).unwrap(), model.params.get(name).unwrap());
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()), "{name} moved");
    }
    let fresh_head = encoder.with_new_head(TaskSpec { kind: TaskKind::Classification, num_classes: 2 }, 0).unwrap();
    assert_ne!(fresh_head.params.get("head.0.w"), None);

    let (tuned, report) = finetune(&encoder, &data, &TrainConfig { mode: TrainMode::Finetune, ..cfg.clone() }).unwrap();
    assert!(report.best_epoch == 0 || tuned.params.get("layer0.phi.0.w") != encoder.params.get("layer0.phi.0.w"));

    let wider = TrainConfig {
        encoder: EncoderConfig { hidden_dim: 13, ..cfg.encoder.clone() },
        mode: TrainMode::Finetune,
        ..cfg.clone()
    };
    assert!(matches!(finetune(&encoder, &data, &wider), Err(GtmpError::Checkpoint(_))));

    let few = TrainConfig { label_fraction: 0.1, ..cfg };
    let (_, report) = train_supervised(&data, &few).unwrap();
    assert_eq!(report.train_used, 3);
}

#[test]
fn configuration_errors() {
    // Two trees leave the validation split empty.
    let data = small_dataset(2, 7, TaskKind::Classification);
    assert!(matches!(train_supervised(&data, &small_config(1)), Err(GtmpError::Config(_))));
    let data = small_dataset(20, 7, TaskKind::Classification);
    assert!(matches!(train_supervised(&data, &TrainConfig { lr: -1.0, ..small_config(1) }), Err(GtmpError::Config(_))));
    assert!(matches!(
        train_supervised(&data, &TrainConfig { label_fraction: 0.0, ..small_config(1) }),
        Err(GtmpError::Config(_))
    ));
}

#[test]
fn trained_model_is_rigid_invariant_and_coordinates_are_not() {
    let data = small_dataset(30, 8, TaskKind::Classification);
    let (model, _) = train_supervised(&data, &small_config(2)).unwrap();
    let trees = &data.trees[..10];
    let labels: Vec<bool> = data.targets[..10].iter().map(|t| *t == Some(1.0)).collect();
    let report = invariance_test(model_scalar_score(&model), trees, Some(&labels), 3, &[0.0, 10.0, 1000.0], 1).unwrap();
    assert!(report.max_deviation < 1e-6, "{}", report.max_deviation);
    for p in &report.points {
        assert!((p.auc.unwrap() - report.baseline_auc.unwrap()).abs() < 1e-12);
    }

    let encoder = EncoderConfig { attr_dim: 3, hidden_dim: 12, num_layers: 2, ..EncoderConfig::default() };
    let task = TaskSpec { kind: TaskKind::Classification, num_classes: 2 };
    let control = GtmpModel::new(ModelConfig { encoder, task: Some(task), generator_bins: None }, 3).unwrap();
    let score = model_scalar_score(&control);
    let leaky = |t: &GeometricTree| score(&with_coordinate_attrs(t)?);
    let report = invariance_test(leaky, trees, None, 3, &[10.0, 1000.0], 2).unwrap();
    assert!(report.max_deviation > 1e-3, "{}", report.max_deviation);
    let csv = report.to_csv();
    assert!(csv.starts_with("magnitude,max_deviation,auc\n"));
}

#[test]
fn small_bench_reports_rows() {
    let enc = EncoderConfig { hidden_dim: 8, num_layers: 2, ..EncoderConfig::default() };
    let report = bench_scaling(&[50, 100, 200], 2, &enc, 0).unwrap();
    assert_eq!(report.rows.iter().map(|r| r.nodes).collect::<Vec<_>>(), vec![50, 100, 200]);
    assert!(report.rows.iter().all(|r| r.mean_seconds > 0.0 && r.branches > 0));
    assert!(report.pearson_r.is_finite());
    assert!(report.to_table().contains("Pearson r"));
}
