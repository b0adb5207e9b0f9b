use gtmp::branches::enumerate_branches;
use gtmp::geometry::{
    apply_rigid, extract_all, extract_branch_features, feature_table, features_from_csv, features_to_csv,
    place_descendant, random_rotation, reconstruct_node, reconstruct_tree, table_from_rows, RigidTransform, SeedTriple,
};
use gtmp::synth::{random_recursive_tree, random_trunked_tree};
use gtmp::tree::{GeometricTree, NodeRecord};
use gtmp::GtmpError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::{norm, oracle, random_branch, sub};

#[test]
fn features_match_atan2_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..2000 {
        let pos = random_branch(&mut rng);
        let got = extract_branch_features(pos, 3).unwrap();
        assert!(got.fully_defined());
        let want = oracle(pos);
        for q in 0..6 {
            assert!((got.values[q] - want[q]).abs() < 1e-10, "entry {q}: {} vs {}", got.values[q], want[q]);
        }
    }
}

#[test]
fn worked_example_torsion() {
    let f = extract_branch_features([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [1.0, 1.0, 1.0]], 3).unwrap();
    assert!((f.phi_ijkp() - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
    assert!((f.theta_ijk() - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
}

#[test]
fn rigid_motions_preserve_features_and_reflection_flips_torsion() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for s in 0..100 {
        let tree = random_recursive_tree(40, s).unwrap();
        let t = random_rotation(1000 + s).with_translation(std::array::from_fn(|_| rng.random_range(-100.0..100.0)));
        let moved = apply_rigid(&tree, &t).unwrap();
        let idx = enumerate_branches(&tree);
        let (a, b) = (extract_all(&tree, &idx).unwrap(), extract_all(&moved, &idx).unwrap());
        for (fa, fb) in a.iter().zip(&b) {
            assert_eq!(fa.mask, fb.mask);
            for q in 0..6 {
                assert!((fa.values[q] - fb.values[q]).abs() < 1e-9);
            }
        }
        let mirror: Vec<[f64; 3]> = (0..tree.len()).map(|v| {
            let p = tree.position(v);
            [p[0], p[1], -p[2]]
        }).collect();
        let mirrored = extract_all(&tree.with_positions(&mirror).unwrap(), &idx).unwrap();
        for (fa, fm) in a.iter().zip(&mirrored) {
            if fa.mask[5] {
                assert!((fa.mirrored().phi_ijkp() - fm.phi_ijkp()).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn non_orthonormal_rotation_rejected() {
    let skew = [[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    assert!(matches!(RigidTransform::new(skew, [0.0; 3]), Err(GtmpError::Transform(_))));
    let reflection = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]];
    assert!(matches!(RigidTransform::new(reflection, [0.0; 3]), Err(GtmpError::Transform(_))));
}

#[test]
fn single_branch_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let pos = random_branch(&mut rng);
        let f = extract_branch_features(pos, 3).unwrap();
        let i = reconstruct_node(pos[1], pos[2], pos[3], &f).unwrap();
        let p = place_descendant(pos[0], pos[1], pos[2], &f).unwrap();
        worst = worst.max(norm(sub(i, pos[0]))).max(norm(sub(p, pos[3])));
    }
    assert!(worst < 1e-8, "worst {worst}");
}

#[test]
fn full_trees_reconstruct() {
    for s in 0..10 {
        let tree = random_trunked_tree(200, 40 + s).unwrap();
        let table = feature_table(&tree).unwrap();
        let seed = SeedTriple { nodes: [0, 1, 2], positions: [tree.position(0), tree.position(1), tree.position(2)] };
        let got = reconstruct_tree(&tree, &table, seed).unwrap();
        let worst = (0..tree.len()).map(|v| norm(sub(got[v], tree.position(v)))).fold(0.0, f64::max);
        assert!(worst < 1e-6, "tree {s}: {worst}");
    }
}

#[test]
fn reconstruction_from_deep_seed_and_csv() {
    let tree = random_trunked_tree(120, 77).unwrap();
    // Seed deep in the tree: ancestors are recovered upward first.
    let c = (0..tree.len()).find(|&v| tree.depth(v) == 6).unwrap();
    let b = tree.parent(c).unwrap();
    let a = tree.parent(b).unwrap();
    let idx = enumerate_branches(&tree);
    let csv = features_to_csv(&tree, &idx, &extract_all(&tree, &idx).unwrap());
    let table = table_from_rows(&tree, &features_from_csv(&csv).unwrap()).unwrap();
    let seed = SeedTriple { nodes: [a, b, c], positions: [tree.position(a), tree.position(b), tree.position(c)] };
    let got = reconstruct_tree(&tree, &table, seed).unwrap();
    for v in 0..tree.len() {
        assert!(norm(sub(got[v], tree.position(v))) < 1e-6);
    }
}

#[test]
fn siblings_near_the_root_are_unreachable() {
    // Root with two children, each leading a chain: the second chain can spin about
    // the root-child axis without changing any feature.
    let pos = [
        [0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [1.5, 1.0, 0.0],
        [2.0, 1.0, 1.0],
        [-1.0, 0.2, 0.0],
        [-1.5, 1.0, 0.3],
        [-2.0, 0.5, 1.0],
    ];
    let parents = [None, Some(0), Some(1), Some(2), Some(0), Some(4), Some(5)];
    let nodes = pos
        .iter()
        .zip(parents)
        .enumerate()
        .map(|(i, (p, q))| NodeRecord { id: i as i64, parent: q.map(|x: usize| x as i64), position: *p, attrs: vec![] })
        .collect();
    let tree = GeometricTree::new(nodes, None).unwrap();
    let table = feature_table(&tree).unwrap();
    let seed = SeedTriple { nodes: [1, 2, 3], positions: [pos[1], pos[2], pos[3]] };
    match reconstruct_tree(&tree, &table, seed) {
        Err(GtmpError::UnreachableNode(ids)) => assert_eq!(ids, vec![4, 5, 6]),
        other => panic!("expected UnreachableNode, got {other:?}"),
    }
}

#[test]
fn collinear_seed_is_reported() {
    let tree = random_trunked_tree(30, 1).unwrap();
    let table = feature_table(&tree).unwrap();
    let seed = SeedTriple { nodes: [0, 1, 2], positions: [[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]] };
    assert!(matches!(reconstruct_tree(&tree, &table, seed), Err(GtmpError::Collinear(_))));
}
