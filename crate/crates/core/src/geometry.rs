//! Rigid-motion invariant branch features and coordinate reconstruction.
//!
//! For a branch `i -> j -> k -> p` the displacement vectors are
//! `P_xy = pos_y - pos_x`. The six features are the lengths of `P_ij`, `P_jk`,
//! `P_jp`, the angles of `P_jk` and `P_jp` against `P_ij`, and the signed
//! dihedral between the planes spanned by `(P_ij, P_jk)` and `(P_ij, P_jp)`.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::branches::{enumerate_branches, Branch3, BranchIndex, PAD};
use crate::error::{GtmpError, Result};
use crate::tree::GeometricTree;

/// Relative threshold below which a cross product counts as collinear.
pub const COLLINEAR_EPS: f64 = 1e-9;

/// Features of one branch plus a mask of which entries are defined.
///
/// Entry order everywhere: `d_ij, d_jk, d_jp, theta_ijk, theta_ijp, phi_ijkp`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchFeatures {
    pub values: [f64; 6],
    pub mask: [bool; 6],
}

impl BranchFeatures {
    pub const NAMES: [&'static str; 6] = ["d_ij", "d_jk", "d_jp", "theta_ijk", "theta_ijp", "phi_ijkp"];

    pub fn d_ij(&self) -> f64 {
        self.values[0]
    }
    pub fn d_jk(&self) -> f64 {
        self.values[1]
    }
    pub fn d_jp(&self) -> f64 {
        self.values[2]
    }
    pub fn theta_ijk(&self) -> f64 {
        self.values[3]
    }
    pub fn theta_ijp(&self) -> f64 {
        self.values[4]
    }
    pub fn phi_ijkp(&self) -> f64 {
        self.values[5]
    }

    pub fn fully_defined(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }

    /// Encoder input row: the six values followed by the six mask bits.
    pub fn to_input(&self) -> [f64; 12] {
        let mut row = [0.0; 12];
        row[..6].copy_from_slice(&self.values);
        for (dst, &m) in row[6..].iter_mut().zip(&self.mask) {
            *dst = if m { 1.0 } else { 0.0 };
        }
        row
    }

    /// Same branch with the torsion sign reversed.
    pub fn mirrored(&self) -> Self {
        let mut out = *self;
        out.values[5] = -out.values[5];
        out
    }
}

fn v3(p: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(p[0], p[1], p[2])
}

fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>, na: f64, nb: f64) -> f64 {
    (a.dot(b) / (na * nb)).clamp(-1.0, 1.0).acos()
}

/// Unit normal of the plane spanned by `a` and `b`, or `None` when they are collinear.
fn plane_normal(a: &Vector3<f64>, b: &Vector3<f64>, na: f64, nb: f64) -> Option<Vector3<f64>> {
    let c = a.cross(b);
    let nc = c.norm();
    if nc < COLLINEAR_EPS * na * nb {
        None
    } else {
        Some(c / nc)
    }
}

/// Computes the features of the branch `pos[0] -> pos[1] -> pos[2] -> pos[3]`.
///
/// Only the first `valid_len + 1` positions are read. Entries that need a
/// missing node, and torsions whose planes are undefined, are 0 with their
/// mask bit cleared.
pub fn extract_branch_features(pos: [[f64; 3]; 4], valid_len: u8) -> Result<BranchFeatures> {
    if !(1..=3).contains(&valid_len) {
        return Err(GtmpError::Contract(format!("valid_len must be 1..=3, got {valid_len}")));
    }
    let used = valid_len as usize + 1;
    if pos[..used].iter().flatten().any(|c| !c.is_finite()) {
        return Err(GtmpError::Numeric("non-finite branch coordinate".into()));
    }
    let mut f = BranchFeatures { values: [0.0; 6], mask: [false; 6] };

    let p_ij = v3(&pos[1]) - v3(&pos[0]);
    let d_ij = p_ij.norm();
    if d_ij == 0.0 {
        return Err(GtmpError::Numeric("coincident nodes i and j".into()));
    }
    f.values[0] = d_ij;
    f.mask[0] = true;
    if valid_len < 2 {
        return Ok(f);
    }

    let p_jk = v3(&pos[2]) - v3(&pos[1]);
    let d_jk = p_jk.norm();
    if d_jk == 0.0 {
        return Err(GtmpError::Numeric("coincident nodes j and k".into()));
    }
    f.values[1] = d_jk;
    f.mask[1] = true;
    f.values[3] = angle_between(&p_ij, &p_jk, d_ij, d_jk);
    f.mask[3] = true;
    if valid_len < 3 {
        return Ok(f);
    }

    let p_jp = v3(&pos[3]) - v3(&pos[1]);
    let d_jp = p_jp.norm();
    if d_jp == 0.0 {
        return Err(GtmpError::Numeric("coincident nodes j and p".into()));
    }
    f.values[2] = d_jp;
    f.mask[2] = true;
    f.values[4] = angle_between(&p_ij, &p_jp, d_ij, d_jp);
    f.mask[4] = true;

    if let (Some(n_ijk), Some(n_ijp)) =
        (plane_normal(&p_ij, &p_jk, d_ij, d_jk), plane_normal(&p_ij, &p_jp, d_ij, d_jp))
    {
        let magnitude = n_ijk.dot(&n_ijp).clamp(-1.0, 1.0).acos();
        // n_ijk x n_ijp is parallel to P_ij; its direction gives the sign.
        let axis = n_ijk.cross(&n_ijp);
        let sign = if axis.norm() == 0.0 || axis.dot(&p_ij) >= 0.0 { 1.0 } else { -1.0 };
        f.values[5] = sign * magnitude;
        f.mask[5] = true;
    }
    Ok(f)
}

/// Features of one enumerated branch of `tree`.
pub fn branch_features(tree: &GeometricTree, b: &Branch3) -> Result<BranchFeatures> {
    let mut pos = [[0.0; 3]; 4];
    for (slot, &n) in b.nodes.iter().enumerate().take(b.valid_len as usize + 1) {
        pos[slot] = tree.position(n);
    }
    extract_branch_features(pos, b.valid_len)
}

/// Features for every branch in `index`, in the same order.
pub fn extract_all(tree: &GeometricTree, index: &BranchIndex) -> Result<Vec<BranchFeatures>> {
    index.branches.iter().map(|b| branch_features(tree, b)).collect()
}

/// A proper rigid motion `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    pub const ORTHONORMAL_TOL: f64 = 1e-12;

    pub fn new(rotation: [[f64; 3]; 3], translation: [f64; 3]) -> Result<Self> {
        let r = Matrix3::from_fn(|i, j| rotation[i][j]);
        if r.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(GtmpError::Transform("non-finite entry".into()));
        }
        let gram_err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if gram_err > Self::ORTHONORMAL_TOL {
            return Err(GtmpError::Transform(format!("R^T R deviates from I by {gram_err:e}")));
        }
        let det = r.determinant();
        if (det - 1.0).abs() > Self::ORTHONORMAL_TOL {
            return Err(GtmpError::Transform(format!("det R = {det}")));
        }
        Ok(Self { rotation: r, translation: v3(&translation) })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn translation(t: [f64; 3]) -> Self {
        Self { rotation: Matrix3::identity(), translation: v3(&t) }
    }

    pub fn rotation_matrix(&self) -> [[f64; 3]; 3] {
        let r = &self.rotation;
        [[r[(0, 0)], r[(0, 1)], r[(0, 2)]], [r[(1, 0)], r[(1, 1)], r[(1, 2)]], [r[(2, 0)], r[(2, 1)], r[(2, 2)]]]
    }

    pub fn translation_vector(&self) -> [f64; 3] {
        [self.translation.x, self.translation.y, self.translation.z]
    }

    pub fn with_translation(mut self, t: [f64; 3]) -> Self {
        self.translation = v3(&t);
        self
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let q = self.rotation * v3(&p) + self.translation;
        [q.x, q.y, q.z]
    }
}

/// Moves every node of `tree` by `t`; topology, attrs and label are kept.
///
/// `t` is valid by construction: [`RigidTransform::new`] rejects non-rotations.
pub fn apply_rigid(tree: &GeometricTree, t: &RigidTransform) -> Result<GeometricTree> {
    let moved: Vec<[f64; 3]> = tree.nodes().iter().map(|n| t.apply(n.position)).collect();
    tree.with_positions(&moved)
}

/// A rotation drawn uniformly from SO(3) (normalized Gaussian quaternion), no translation.
pub fn random_rotation(seed: u64) -> RigidTransform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_rotation_with(&mut rng)
}

pub(crate) fn random_rotation_with<R: rand::Rng>(rng: &mut R) -> RigidTransform {
    let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
    let unit = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
    RigidTransform { rotation: *unit.to_rotation_matrix().matrix(), translation: Vector3::zeros() }
}

/// Recovers `pos_i` from the positions of `j`, `k`, `p` and the branch features.
///
/// Writes `pos_i - pos_j` in the frame `(P_jk, P_jp, P_jk x P_jp)`: the two
/// angle constraints fix the in-plane part, the length fixes the normal
/// component up to sign, and the torsion picks the sign.
pub fn reconstruct_node(pos_j: [f64; 3], pos_k: [f64; 3], pos_p: [f64; 3], f: &BranchFeatures) -> Result<[f64; 3]> {
    if !(f.mask[0] && f.mask[3] && f.mask[4]) {
        return Err(GtmpError::Contract("reconstruction needs d_ij, theta_ijk and theta_ijp".into()));
    }
    let (j, k, p) = (v3(&pos_j), v3(&pos_k), v3(&pos_p));
    let a = k - j;
    let b = p - j;
    let (na, nb) = (a.norm(), b.norm());
    let c = a.cross(&b);
    let nc = c.norm();
    if na == 0.0 || nb == 0.0 || nc < COLLINEAR_EPS * na * nb {
        return Err(GtmpError::Collinear("anchors j, k, p".into()));
    }

    let d = f.d_ij();
    // u = pos_i - pos_j = -P_ij
    let ua = -d * na * f.theta_ijk().cos();
    let ub = -d * nb * f.theta_ijp().cos();
    let (g11, g12, g22) = (a.dot(&a), a.dot(&b), b.dot(&b));
    let det = g11 * g22 - g12 * g12;
    let alpha = (ua * g22 - ub * g12) / det;
    let beta = (ub * g11 - ua * g12) / det;
    let in_plane = a * alpha + b * beta;
    let residual = d * d - in_plane.norm_squared();
    if residual < -1e-8 * d * d {
        return Err(GtmpError::Infeasible(format!(
            "angle constraints need |u| >= {:.6e} but d_ij = {d:.6e}",
            in_plane.norm()
        )));
    }
    let gamma = residual.max(0.0).sqrt() / nc;

    let candidate = |s: f64| -> Result<([f64; 3], BranchFeatures)> {
        let u = in_plane + c * (s * gamma);
        let pos_i = [j.x + u.x, j.y + u.y, j.z + u.z];
        Ok((pos_i, extract_branch_features([pos_i, pos_j, pos_k, pos_p], 3)?))
    };
    let (plus, f_plus) = candidate(1.0)?;
    let (minus, f_minus) = candidate(-1.0)?;
    let chosen = if !f.mask[5] || !f_plus.mask[5] {
        if gamma * nc > 1e-7 * d.max(1.0) {
            return Err(GtmpError::Infeasible("torsion undefined but two mirror placements exist".into()));
        }
        (plus, f_plus)
    } else {
        let err = |g: &BranchFeatures| angle_gap(g.phi_ijkp(), f.phi_ijkp());
        if err(&f_plus) <= err(&f_minus) {
            (plus, f_plus)
        } else {
            (minus, f_minus)
        }
    };
    check_consistent(&chosen.1, f)?;
    Ok(chosen.0)
}

/// Places `pos_p` given `i`, `j`, `k` and the features of `i -> j -> k -> p`.
pub fn place_descendant(pos_i: [f64; 3], pos_j: [f64; 3], pos_k: [f64; 3], f: &BranchFeatures) -> Result<[f64; 3]> {
    if !(f.mask[2] && f.mask[4]) {
        return Err(GtmpError::Contract("placement needs d_jp and theta_ijp".into()));
    }
    let (i, j, k) = (v3(&pos_i), v3(&pos_j), v3(&pos_k));
    let p_ij = j - i;
    let p_jk = k - j;
    let (nij, njk) = (p_ij.norm(), p_jk.norm());
    if nij == 0.0 || njk == 0.0 {
        return Err(GtmpError::Collinear("coincident anchors".into()));
    }
    let e1 = p_ij / nij;
    let (sin_t, cos_t) = f.theta_ijp().sin_cos();
    let along = e1 * (f.d_jp() * cos_t);
    let v = if sin_t.abs() < COLLINEAR_EPS {
        along
    } else {
        let e3 = plane_normal(&p_ij, &p_jk, nij, njk)
            .ok_or_else(|| GtmpError::Collinear("anchors i, j, k lie on one line".into()))?;
        if !f.mask[5] {
            return Err(GtmpError::Infeasible("torsion undefined for an off-axis descendant".into()));
        }
        let e2 = e3.cross(&e1);
        let (sin_p, cos_p) = f.phi_ijkp().sin_cos();
        along + (e2 * cos_p + e3 * sin_p) * (f.d_jp() * sin_t)
    };
    let p = j + v;
    Ok([p.x, p.y, p.z])
}

fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::TAU);
    d.min(std::f64::consts::TAU - d)
}

fn check_consistent(got: &BranchFeatures, want: &BranchFeatures) -> Result<()> {
    const TOL: f64 = 1e-6;
    for idx in 0..6 {
        if !(want.mask[idx] && got.mask[idx]) {
            continue;
        }
        let gap = if idx == 5 {
            angle_gap(got.values[idx], want.values[idx])
        } else if idx < 3 {
            (got.values[idx] - want.values[idx]).abs() / want.values[idx].max(1.0)
        } else {
            (got.values[idx] - want.values[idx]).abs()
        };
        if gap > TOL {
            return Err(GtmpError::Infeasible(format!(
                "{} reproduced as {} instead of {}",
                BranchFeatures::NAMES[idx],
                got.values[idx],
                want.values[idx]
            )));
        }
    }
    Ok(())
}

/// Features of full branches keyed by their four node indices.
pub type FeatureTable = HashMap<[usize; 4], BranchFeatures>;

/// Table of every full branch of `tree`.
pub fn feature_table(tree: &GeometricTree) -> Result<FeatureTable> {
    let index = enumerate_branches(tree);
    let mut table = FeatureTable::new();
    for b in index.branches.iter().filter(|b| b.is_full()) {
        table.insert(b.nodes, branch_features(tree, b)?);
    }
    Ok(table)
}

/// Three connected nodes `a -> b -> c` with known coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedTriple {
    pub nodes: [usize; 3],
    pub positions: [[f64; 3]; 3],
}

/// Recovers every node position from branch features and one seeded chain.
///
/// The coordinates stored in `topology` are never read. Ancestors of the seed
/// are recovered upward with [`reconstruct_node`]; every other node at depth
/// 3 or more is then placed from its three nearest ancestors with
/// [`place_descendant`]. Nodes outside that reach (siblings within the top two
/// levels) are not determined by the features and yield `UnreachableNode`.
pub fn reconstruct_tree(topology: &GeometricTree, features: &FeatureTable, seed: SeedTriple) -> Result<Vec<[f64; 3]>> {
    let [a, b, c] = seed.nodes;
    let n = topology.len();
    if a >= n || b >= n || c >= n || topology.parent(b) != Some(a) || topology.parent(c) != Some(b) {
        return Err(GtmpError::Contract("seed triple must be a parent -> child -> grandchild chain".into()));
    }
    {
        let [pa, pb, pc] = seed.positions.map(|p| v3(&p));
        let (u, w) = (pb - pa, pc - pb);
        if plane_normal(&u, &w, u.norm(), w.norm()).is_none() {
            return Err(GtmpError::Collinear(format!(
                "seed nodes {}, {}, {}",
                topology.id(a),
                topology.id(b),
                topology.id(c)
            )));
        }
    }
    let lookup = |key: [usize; 4]| {
        features.get(&key).ok_or_else(|| {
            GtmpError::Contract(format!("missing features for branch {:?}", key.map(|x| topology.id(x))))
        })
    };

    let mut known: Vec<Option<[f64; 3]>> = vec![None; n];
    known[a] = Some(seed.positions[0]);
    known[b] = Some(seed.positions[1]);
    known[c] = Some(seed.positions[2]);

    let mut chain = [a, b, c];
    while let Some(up) = topology.parent(chain[0]) {
        let key = [up, chain[0], chain[1], chain[2]];
        let pos = reconstruct_node(
            known[chain[0]].unwrap(),
            known[chain[1]].unwrap(),
            known[chain[2]].unwrap(),
            lookup(key)?,
        )
        .map_err(|e| annotate(e, topology, &key))?;
        known[up] = Some(pos);
        chain = [up, chain[0], chain[1]];
    }

    // Breadth-first order guarantees ancestors are visited first.
    let mut order = vec![topology.root()];
    let mut head = 0;
    while head < order.len() {
        let v = order[head];
        head += 1;
        order.extend_from_slice(topology.children(v));
    }
    let mut collinear = None;
    for &v in &order {
        if known[v].is_some() || topology.depth(v) < 3 {
            continue;
        }
        let k = topology.parent(v).unwrap();
        let j = topology.parent(k).unwrap();
        let i = topology.parent(j).unwrap();
        let (Some(pi), Some(pj), Some(pk)) = (known[i], known[j], known[k]) else {
            continue;
        };
        let key = [i, j, k, v];
        match place_descendant(pi, pj, pk, lookup(key)?) {
            Ok(pos) => known[v] = Some(pos),
            Err(e @ GtmpError::Collinear(_)) => {
                collinear.get_or_insert(annotate(e, topology, &key));
            }
            Err(e) => return Err(annotate(e, topology, &key)),
        }
    }

    let missing: Vec<i64> = (0..n).filter(|&v| known[v].is_none()).map(|v| topology.id(v)).collect();
    if !missing.is_empty() {
        return Err(collinear.unwrap_or(GtmpError::UnreachableNode(missing)));
    }
    Ok(known.into_iter().map(Option::unwrap).collect())
}

fn annotate(e: GtmpError, topology: &GeometricTree, key: &[usize; 4]) -> GtmpError {
    let ids = key.map(|x| topology.id(x));
    match e {
        GtmpError::Collinear(m) => GtmpError::Collinear(format!("{m} (branch {ids:?})")),
        GtmpError::Infeasible(m) => GtmpError::Infeasible(format!("{m} (branch {ids:?})")),
        other => other,
    }
}

/// Header of the branch feature CSV.
pub const FEATURE_CSV_HEADER: &str = "i,j,k,p,valid_len,d_ij,d_jk,d_jp,theta_ijk,theta_ijp,phi_ijkp,\
m_d_ij,m_d_jk,m_d_jp,m_theta_ijk,m_theta_ijp,m_phi_ijkp";

/// One CSV row per branch; node ids are the tree's external ids, padded slots empty.
pub fn features_to_csv(tree: &GeometricTree, index: &BranchIndex, features: &[BranchFeatures]) -> String {
    let mut out = String::from(FEATURE_CSV_HEADER);
    out.push('\n');
    for (b, f) in index.branches.iter().zip(features) {
        for &slot in &b.nodes {
            if slot != PAD {
                write!(out, "{}", tree.id(slot)).unwrap();
            }
            out.push(',');
        }
        write!(out, "{}", b.valid_len).unwrap();
        for v in f.values {
            write!(out, ",{v}").unwrap();
        }
        for m in f.mask {
            write!(out, ",{}", u8::from(m)).unwrap();
        }
        out.push('\n');
    }
    out
}

/// One parsed CSV row: external node ids (`None` for padding) and features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub ids: [Option<i64>; 4],
    pub valid_len: u8,
    pub features: BranchFeatures,
}

pub fn features_from_csv(text: &str) -> Result<Vec<FeatureRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == FEATURE_CSV_HEADER => {}
        _ => return Err(GtmpError::Format("feature CSV header mismatch".into())),
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 17 {
            return Err(GtmpError::Format(format!("row {}: expected 17 columns", n + 2)));
        }
        let bad = |what: &str| GtmpError::Format(format!("row {}: bad {what}", n + 2));
        let mut ids = [None; 4];
        for s in 0..4 {
            if !cols[s].is_empty() {
                ids[s] = Some(cols[s].parse::<i64>().map_err(|_| bad("node id"))?);
            }
        }
        let valid_len: u8 = cols[4].parse().map_err(|_| bad("valid_len"))?;
        let mut features = BranchFeatures { values: [0.0; 6], mask: [false; 6] };
        for q in 0..6 {
            features.values[q] = cols[5 + q].parse().map_err(|_| bad("feature value"))?;
            features.mask[q] = match cols[11 + q] {
                "0" => false,
                "1" => true,
                _ => return Err(bad("mask bit")),
            };
        }
        rows.push(FeatureRow { ids, valid_len, features });
    }
    Ok(rows)
}

/// Builds a [`FeatureTable`] for `topology` from parsed CSV rows (full branches only).
pub fn table_from_rows(topology: &GeometricTree, rows: &[FeatureRow]) -> Result<FeatureTable> {
    let mut table = FeatureTable::new();
    for r in rows.iter().filter(|r| r.valid_len == 3) {
        let mut key = [0usize; 4];
        for s in 0..4 {
            let id = r.ids[s].ok_or_else(|| GtmpError::Format("full branch with empty slot".into()))?;
            key[s] =
                topology.index_of(id).ok_or_else(|| GtmpError::Format(format!("feature row names unknown node {id}")))?;
        }
        table.insert(key, r.features);
    }
    Ok(table)
}
