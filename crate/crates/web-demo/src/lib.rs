//! Browser demo: generate a tree, move it rigidly, rebuild it from its features.
//!
//! Each operation takes and returns JSON strings so the page stays framework free.

use gtmp::branches::enumerate_branches;
use gtmp::eval::model_scalar_score;
use gtmp::geometry::{apply_rigid, extract_all, feature_table, reconstruct_tree, RigidTransform, SeedTriple};
use gtmp::io::{parse_tree_json, serialize_tree_json, TaskKind};
use gtmp::model::{EncoderConfig, GtmpModel, ModelConfig, TaskSpec};
use gtmp::synth::{generate_synthetic, GeneratorConfig};
use gtmp::tree::GeometricTree;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

type Res<T> = Result<T, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn view(tree: &GeometricTree) -> Value {
    let nodes: Vec<Value> = (0..tree.len())
        .map(|v| json!({ "id": tree.id(v), "parent": tree.parent(v), "xyz": tree.position(v), "depth": tree.depth(v) }))
        .collect();
    json!({ "nodes": nodes })
}

/// A small random untrained network; any weights give an invariant score.
fn probe_model() -> Res<GtmpModel> {
    let encoder = EncoderConfig { hidden_dim: 8, num_layers: 2, ..EncoderConfig::default() };
    let task = TaskSpec { kind: TaskKind::Classification, num_classes: 2 };
    GtmpModel::new(ModelConfig { encoder, task: Some(task), generator_bins: None }, 7).map_err(err)
}

pub fn generate(seed: u64, depth: usize) -> Res<String> {
    let depth = depth.clamp(3, 9);
    let cfg = GeneratorConfig { count: 1, min_depth: depth, max_depth: depth, max_nodes: 80, ..GeneratorConfig::default() };
    let sample = generate_synthetic(&cfg, seed).map_err(err)?.remove(0);
    Ok(json!({
        "tree": serialize_tree_json(&sample.tree),
        "view": view(&sample.tree),
        "class": sample.class,
    })
    .to_string())
}

fn rotation(yaw: f64, pitch: f64, roll: f64) -> [[f64; 3]; 3] {
    let (sa, ca) = yaw.sin_cos();
    let (sb, cb) = pitch.sin_cos();
    let (sc, cc) = roll.sin_cos();
    let rz = [[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]];
    let ry = [[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]];
    let rx = [[1.0, 0.0, 0.0], [0.0, cc, -sc], [0.0, sc, cc]];
    let mul = |a: [[f64; 3]; 3], b: [[f64; 3]; 3]| {
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        m
    };
    mul(mul(rz, ry), rx)
}

/// Applies a rotation (radians) and translation; reports feature and score drift.
pub fn transform(tree_json: &str, yaw: f64, pitch: f64, roll: f64, shift: [f64; 3]) -> Res<String> {
    let tree = parse_tree_json(tree_json).map_err(err)?;
    let rigid = RigidTransform::new(rotation(yaw, pitch, roll), shift).map_err(err)?;
    let moved = apply_rigid(&tree, &rigid).map_err(err)?;
    let index = enumerate_branches(&tree);
    let before = extract_all(&tree, &index).map_err(err)?;
    let after = extract_all(&moved, &index).map_err(err)?;
    let feature_drift = before
        .iter()
        .zip(&after)
        .flat_map(|(a, b)| a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()))
        .fold(0.0f64, f64::max);
    let model = probe_model()?;
    let score = model_scalar_score(&model);
    let (s0, s1) = (score(&tree).map_err(err)?, score(&moved).map_err(err)?);
    let sample: Vec<Value> = index
        .branches
        .iter()
        .zip(&before)
        .filter(|(b, _)| b.is_full())
        .take(6)
        .map(|(b, f)| json!({ "nodes": b.nodes.map(|v| tree.id(v)), "features": f.values }))
        .collect();
    Ok(json!({
        "tree": serialize_tree_json(&moved),
        "view": view(&moved),
        "branches": index.branches.len(),
        "feature_drift": feature_drift,
        "score_before": s0,
        "score_after": s1,
        "sample": sample,
    })
    .to_string())
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Reflection of `p` through the plane holding `a`, `b`, `c`.
fn reflect(p: [f64; 3], [a, b, c]: [[f64; 3]; 3]) -> [f64; 3] {
    let (u, v) = (sub(b, a), sub(c, a));
    let n = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
    let len = dot(n, n).sqrt();
    let n = n.map(|x| x / len);
    let d = 2.0 * dot(sub(p, a), n);
    [p[0] - d * n[0], p[1] - d * n[1], p[2] - d * n[2]]
}

/// Rebuilds every coordinate from branch features and the root chain.
///
/// With `mirror`, torsion signs are flipped first, which yields the reflection
/// of the tree through the plane of the three seed nodes.
pub fn reconstruct(tree_json: &str, mirror: bool) -> Res<String> {
    let tree = parse_tree_json(tree_json).map_err(err)?;
    let mut table = feature_table(&tree).map_err(err)?;
    if mirror {
        for f in table.values_mut() {
            *f = f.mirrored();
        }
    }
    let root = tree.root();
    let child = *tree.children(root).first().ok_or("tree needs a root chain of three nodes")?;
    let grandchild = *tree.children(child).first().ok_or("tree needs a root chain of three nodes")?;
    let nodes = [root, child, grandchild];
    let positions = nodes.map(|v| tree.position(v));
    let coords = reconstruct_tree(&tree, &table, SeedTriple { nodes, positions }).map_err(err)?;
    let expected: Vec<[f64; 3]> =
        (0..tree.len()).map(|v| if mirror { reflect(tree.position(v), positions) } else { tree.position(v) }).collect();
    let max_error = coords
        .iter()
        .zip(&expected)
        .flat_map(|(p, q)| (0..3).map(move |c| (p[c] - q[c]).abs()))
        .fold(0.0f64, f64::max);
    let rebuilt = tree.with_positions(&coords).map_err(err)?;
    Ok(json!({
        "tree": serialize_tree_json(&rebuilt),
        "view": view(&rebuilt),
        "seed": nodes.map(|v| tree.id(v)),
        "max_error": max_error,
    })
    .to_string())
}

#[wasm_bindgen]
pub fn demo_generate(seed: u32, depth: u32) -> Result<String, JsValue> {
    generate(seed as u64, depth as usize).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn demo_transform(tree_json: &str, yaw: f64, pitch: f64, roll: f64, tx: f64, ty: f64, tz: f64) -> Result<String, JsValue> {
    transform(tree_json, yaw, pitch, roll, [tx, ty, tz]).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn demo_reconstruct(tree_json: &str, mirror: bool) -> Result<String, JsValue> {
    reconstruct(tree_json, mirror).map_err(|e| JsValue::from_str(&e))
}
