use gtmp::autodiff::{Activation, ParamSet, Reduce};
use gtmp::geometry::{apply_rigid, random_rotation};
use gtmp::io::TaskKind;
use gtmp::model::{EncoderConfig, GtmpModel, ModelConfig, Readout, TaskSpec};
use gtmp::synth::random_recursive_tree;
use gtmp::tree::{GeometricTree, NodeRecord};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type V = [f64; 3];

fn sub(a: V, b: V) -> V {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
fn dot(a: V, b: V) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
fn cross(a: V, b: V) -> V {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}
fn norm(a: V) -> f64 {
    dot(a, a).sqrt()
}

fn act(x: f64, a: Activation) -> f64 {
    match a {
        Activation::Relu => x.max(0.0),
        Activation::Tanh => x.tanh(),
        Activation::Identity => x,
    }
}

/// Plain-loop MLP over the `{prefix}.{l}.w|b` tensors.
fn mlp(p: &ParamSet, prefix: &str, layers: usize, x: &[f64], a: Activation) -> Vec<f64> {
    let mut h = x.to_vec();
    for l in 0..layers {
        let w = p.get(&format!("{prefix}.{l}.w")).unwrap();
        let b = p.get(&format!("{prefix}.{l}.b")).unwrap();
        assert_eq!(w.rows(), h.len());
        h = (0..w.cols())
            .map(|c| {
                let z = b.get(0, c) + (0..h.len()).map(|r| h[r] * w.get(r, c)).sum::<f64>();
                if l + 1 < layers { act(z, a) } else { z }
            })
            .collect();
    }
    h
}

/// 12-wide geometric input of the path `nodes` (2 to 4 nodes) with mask bits.
fn geo_row(t: &GeometricTree, nodes: &[usize]) -> Vec<f64> {
    let pos: Vec<V> = nodes.iter().map(|&v| t.position(v)).collect();
    let mut vals = [0.0; 6];
    let mut mask = [0.0; 6];
    let pij = sub(pos[1], pos[0]);
    vals[0] = norm(pij);
    mask[0] = 1.0;
    if pos.len() > 2 {
        let pjk = sub(pos[2], pos[1]);
        vals[1] = norm(pjk);
        vals[3] = norm(cross(pij, pjk)).atan2(dot(pij, pjk));
        mask[1] = 1.0;
        mask[3] = 1.0;
    }
    if pos.len() > 3 {
        let (pjk, pjp) = (sub(pos[2], pos[1]), sub(pos[3], pos[1]));
        vals[2] = norm(pjp);
        vals[4] = norm(cross(pij, pjp)).atan2(dot(pij, pjp));
        mask[2] = 1.0;
        mask[4] = 1.0;
        let (n1, n2) = (cross(pij, pjk), cross(pij, pjp));
        if norm(n1) > 1e-9 * norm(pij) * norm(pjk) && norm(n2) > 1e-9 * norm(pij) * norm(pjp) {
            vals[5] = dot(cross(n1, n2), pij.map(|x| x / norm(pij))).atan2(dot(n1, n2));
            mask[5] = 1.0;
        }
    }
    vals.into_iter().chain(mask).collect()
}

/// Maximal descending paths of up to three edges, built by recursion.
fn paths_from(t: &GeometricTree, i: usize) -> Vec<Vec<usize>> {
    fn go(t: &GeometricTree, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        let last = *path.last().unwrap();
        if path.len() == 4 || (path.len() > 1 && t.is_leaf(last)) {
            out.push(path.clone());
            return;
        }
        for &c in t.children(last) {
            path.push(c);
            go(t, path, out);
            path.pop();
        }
    }
    let mut out = Vec::new();
    go(t, &mut vec![i], &mut out);
    out.retain(|p| p.len() > 1);
    out
}

/// Independent forward pass: node embeddings of the last layer and the tree vector.
fn oracle_forward(model: &GtmpModel, t: &GeometricTree) -> (Vec<Vec<f64>>, Vec<f64>) {
    let cfg = model.encoder_config();
    let (d, a) = (cfg.hidden_dim, cfg.activation);
    let p = &model.params;
    let c = p.get("embed.const").unwrap().data().to_vec();
    let mut h: Vec<Vec<f64>> = vec![c; t.len()];
    for l in 0..cfg.num_layers {
        let mut next = Vec::with_capacity(t.len());
        for i in 0..t.len() {
            let msgs: Vec<Vec<f64>> = paths_from(t, i)
                .iter()
                .map(|path| {
                    let mut x = h[i].clone();
                    for s in 1..4 {
                        match path.get(s) {
                            Some(&v) => x.extend(h[v].iter().map(|e| e * cfg.alpha[s - 1])),
                            None => x.extend(std::iter::repeat_n(0.0, d)),
                        }
                    }
                    x.extend(mlp(p, &format!("layer{l}.psi"), 2, &geo_row(t, path), a));
                    mlp(p, &format!("layer{l}.phi"), 2, &x, a)
                })
                .collect();
            let mut agg = vec![0.0; d];
            for m in &msgs {
                for q in 0..d {
                    agg[q] += m[q];
                }
            }
            if !msgs.is_empty() {
                agg.iter_mut().for_each(|v| *v /= msgs.len() as f64);
            }
            next.push(mlp(p, &format!("layer{l}.sigma"), 2, &agg, a));
        }
        h = next;
    }
    let tv = (0..d).map(|q| h.iter().map(|r| r[q]).sum::<f64>() / t.len() as f64).collect();
    (h, tv)
}

fn config(d: usize, layers: usize, alpha: [f64; 3], task: Option<TaskSpec>) -> ModelConfig {
    let encoder = EncoderConfig { num_layers: layers, hidden_dim: d, alpha, ..EncoderConfig::default() };
    ModelConfig { encoder, task, generator_bins: None }
}

fn build(positions: &[V], parents: &[Option<usize>]) -> GeometricTree {
    let nodes = positions
        .iter()
        .zip(parents)
        .enumerate()
        .map(|(i, (&position, p))| NodeRecord { id: i as i64, parent: p.map(|x| x as i64), position, attrs: vec![] })
        .collect();
    GeometricTree::new(nodes, None).unwrap()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn hand_set_path_matches_oracle() {
    let t = build(
        &[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [1.0, 1.0, 1.0]],
        &[None, Some(0), Some(1), Some(2)],
    );
    let mut model = GtmpModel::new(config(2, 1, [1.0, 1.0, 1.0], None), 0).unwrap();
    // Deterministic weights: entry q of tensor id gets a small distinct value.
    for id in 0..model.params.len() {
        let t = model.params.tensor_mut(id);
        for (q, v) in t.data_mut().iter_mut().enumerate() {
            *v = 0.1 * ((id * 7 + q * 3) % 11) as f64 - 0.45;
        }
    }
    let enc = model.encode(&t).unwrap();
    let (h, tv) = oracle_forward(&model, &t);
    for v in 0..4 {
        assert!(max_diff(enc.final_layer().row_slice(v), &h[v]) < 1e-10);
    }
    assert!(max_diff(&enc.tree_vector, &tv) < 1e-10);
    // The leaf has no branches.
    let sigma0 = mlp(&model.params, "layer0.sigma", 2, &[0.0, 0.0], Activation::Relu);
    assert!(max_diff(&h[3], &sigma0) < 1e-15);
}

#[test]
fn random_trees_match_oracle() {
    for s in 0..5 {
        let t = random_recursive_tree(30 + 5 * s as usize, 200 + s).unwrap();
        let model = GtmpModel::new(config(6, 3, [0.7, -0.4, 1.3], None), s).unwrap();
        let enc = model.encode(&t).unwrap();
        let (h, tv) = oracle_forward(&model, &t);
        for v in 0..t.len() {
            assert!(max_diff(enc.final_layer().row_slice(v), &h[v]) < 1e-10);
        }
        assert!(max_diff(&enc.tree_vector, &tv) < 1e-10);
    }
}

#[test]
fn zero_alpha_ignores_descendant_embeddings() {
    let t = random_recursive_tree(25, 3).unwrap();
    let zero = GtmpModel::new(config(6, 2, [0.0; 3], None), 4).unwrap();
    let (h, _) = oracle_forward(&zero, &t);
    let enc = zero.encode(&t).unwrap();
    for v in 0..t.len() {
        assert!(max_diff(enc.final_layer().row_slice(v), &h[v]) < 1e-10);
    }
    // The same weights with alpha = 1 see descendants and give different embeddings.
    let mut one_cfg = zero.config.clone();
    one_cfg.encoder.alpha = [1.0; 3];
    let one = GtmpModel::from_params(one_cfg, zero.params.clone()).unwrap();
    assert!(max_diff(&one.encode(&t).unwrap().tree_vector, &enc.tree_vector) > 1e-6);
}

#[test]
fn relabeling_and_sibling_order_do_not_matter() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let model = GtmpModel::new(config(8, 2, [1.0; 3], None), 1).unwrap();
    for s in 0..10 {
        let t = random_recursive_tree(40, 300 + s).unwrap();
        let mut nodes = t.nodes().to_vec();
        nodes.shuffle(&mut rng);
        // Fresh ids, consistent parent references.
        let remap: std::collections::HashMap<i64, i64> =
            nodes.iter().map(|n| (n.id, rng.random_range(0..1_000_000) * 40 + n.id)).collect();
        for n in &mut nodes {
            n.id = remap[&n.id];
            n.parent = n.parent.map(|p| remap[&p]);
        }
        let shuffled = GeometricTree::new(nodes, None).unwrap();
        let (a, b) = (model.encode(&t).unwrap(), model.encode(&shuffled).unwrap());
        assert!(max_diff(&a.tree_vector, &b.tree_vector) < 1e-9);
        for v in 0..t.len() {
            let w = shuffled.index_of(remap[&t.id(v)]).unwrap();
            assert!(max_diff(a.final_layer().row_slice(v), b.final_layer().row_slice(w)) < 1e-9);
        }
    }
}

#[test]
fn rigid_motion_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let model = GtmpModel::new(config(16, 3, [1.0; 3], None), 2).unwrap();
    for s in 0..20 {
        let t = random_recursive_tree(50, 400 + s).unwrap();
        let rigid = random_rotation(500 + s).with_translation(std::array::from_fn(|_| rng.random_range(-1e3..1e3)));
        let moved = apply_rigid(&t, &rigid).unwrap();
        let (a, b) = (model.encode(&t).unwrap(), model.encode(&moved).unwrap());
        for l in 0..a.layers.len() {
            assert!(max_diff(a.layers[l].data(), b.layers[l].data()) < 1e-9);
        }
    }
}

#[test]
fn reversing_the_hierarchy_changes_the_output() {
    let pos = [[0.0, 0.0, 0.0], [1.0, 0.2, 0.0], [1.5, 1.0, 0.3], [1.2, 1.8, 1.1], [2.0, 2.5, 1.0]];
    let down = build(&pos, &[None, Some(0), Some(1), Some(2), Some(3)]);
    let up = build(&pos, &[Some(1), Some(2), Some(3), Some(4), None]);
    let model = GtmpModel::new(config(8, 2, [1.0; 3], None), 3).unwrap();
    let diff = max_diff(&model.encode(&down).unwrap().tree_vector, &model.encode(&up).unwrap().tree_vector);
    assert!(diff > 1e-6, "diff {diff}");
}

#[test]
fn zero_head_weights_give_the_bias() {
    let task = TaskSpec { kind: TaskKind::Classification, num_classes: 3 };
    let mut model = GtmpModel::new(config(8, 2, [1.0; 3], Some(task)), 4).unwrap();
    let id = model.params.id("head.2.w").unwrap();
    model.params.tensor_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
    let bias = model.params.get("head.2.b").unwrap().data().to_vec();
    for s in 0..3 {
        let t = random_recursive_tree(20, s).unwrap();
        let enc = model.encode(&t).unwrap();
        assert_eq!(model.predict(&enc.tree_vector, TaskKind::Classification).unwrap(), bias);
    }
}

#[test]
fn sum_readout_scales_mean_and_max_agg_runs() {
    let t = random_recursive_tree(33, 12).unwrap();
    let mean = GtmpModel::new(config(8, 2, [1.0; 3], None), 5).unwrap();
    let mut cfg = mean.config.clone();
    cfg.encoder.readout = Readout::Sum;
    let sum = GtmpModel::from_params(cfg.clone(), mean.params.clone()).unwrap();
    let (a, b) = (mean.encode(&t).unwrap().tree_vector, sum.encode(&t).unwrap().tree_vector);
    for (x, y) in a.iter().zip(&b) {
        assert!((x * 33.0 - y).abs() < 1e-9);
    }
    cfg.encoder.agg = Reduce::Max;
    let max = GtmpModel::from_params(cfg, mean.params.clone()).unwrap();
    assert!(max.encode(&t).unwrap().tree_vector.iter().all(|v| v.is_finite()));
}
