//! Oracles shared by the integration tests.
#![allow(dead_code)]

use gtmp::autodiff::{ParamSet, Tensor};

pub const H: f64 = 1e-5;

/// Central-difference gradient of `f` at `params`, tensor by tensor.
pub fn numeric_grad(params: &ParamSet, f: &dyn Fn(&ParamSet) -> f64) -> Vec<Tensor> {
    let mut p = params.clone();
    (0..params.len())
        .map(|id| {
            let t = params.tensor(id);
            let mut out = Tensor::zeros(t.rows(), t.cols());
            for q in 0..t.data().len() {
                let x0 = t.data()[q];
                p.tensor_mut(id).data_mut()[q] = x0 + H;
                let up = f(&p);
                p.tensor_mut(id).data_mut()[q] = x0 - H;
                let down = f(&p);
                p.tensor_mut(id).data_mut()[q] = x0;
                out.data_mut()[q] = (up - down) / (2.0 * H);
            }
            out
        })
        .collect()
}

/// `||a - n|| / (||a|| + ||n||)` over all parameters.
pub fn relative_error(analytic: &[Tensor], numeric: &[Tensor]) -> f64 {
    let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
    for (a, n) in analytic.iter().zip(numeric) {
        for (x, y) in a.data().iter().zip(n.data()) {
            diff += (x - y).powi(2);
            na += x * x;
            nn += y * y;
        }
    }
    assert!(na > 0.0, "analytic gradient is identically zero");
    diff.sqrt() / (na.sqrt() + nn.sqrt())
}

/// Transport cost between two unit-mass histograms on points `mu`, by successive
/// shortest paths with Bellman-Ford on the residual graph.
pub fn min_cost_flow_emd(p: &[f64], q: &[f64], mu: &[f64]) -> f64 {
    let k = p.len();
    let (s, t, n) = (2 * k, 2 * k + 1, 2 * k + 2);
    // (to, cap, cost, rev)
    let mut adj: Vec<Vec<(usize, f64, f64, usize)>> = vec![Vec::new(); n];
    let add = |adj: &mut Vec<Vec<(usize, f64, f64, usize)>>, a: usize, b: usize, cap: f64, cost: f64| {
        let (ra, rb) = (adj[b].len(), adj[a].len());
        adj[a].push((b, cap, cost, ra));
        adj[b].push((a, 0.0, -cost, rb));
    };
    for a in 0..k {
        add(&mut adj, s, a, p[a], 0.0);
        add(&mut adj, k + a, t, q[a], 0.0);
        for b in 0..k {
            add(&mut adj, a, k + b, f64::INFINITY, (mu[a] - mu[b]).abs());
        }
    }
    let mut total = 0.0;
    loop {
        let mut dist = vec![f64::INFINITY; n];
        let mut prev: Vec<Option<(usize, usize)>> = vec![None; n];
        dist[s] = 0.0;
        for _ in 0..n {
            let mut changed = false;
            for u in 0..n {
                if dist[u].is_infinite() {
                    continue;
                }
                for (e, &(v, cap, cost, _)) in adj[u].iter().enumerate() {
                    if cap > 1e-15 && dist[u] + cost < dist[v] - 1e-15 {
                        dist[v] = dist[u] + cost;
                        prev[v] = Some((u, e));
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        if dist[t].is_infinite() {
            return total;
        }
        let mut push = f64::INFINITY;
        let mut v = t;
        while let Some((u, e)) = prev[v] {
            push = push.min(adj[u][e].1);
            v = u;
        }
        let mut v = t;
        while let Some((u, e)) = prev[v] {
            adj[u][e].1 -= push;
            let (to, rev) = (adj[u][e].0, adj[u][e].3);
            adj[to][rev].1 += push;
            v = u;
        }
        total += push * dist[t];
    }
}


pub type V = [f64; 3];

pub fn sub(a: V, b: V) -> V {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
pub fn dot(a: V, b: V) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
pub fn cross(a: V, b: V) -> V {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}
pub fn norm(a: V) -> f64 {
    dot(a, a).sqrt()
}

/// Angles through atan2 and the dihedral through the standard two-normal atan2 form.
pub fn oracle(pos: [V; 4]) -> [f64; 6] {
    let (pij, pjk, pjp) = (sub(pos[1], pos[0]), sub(pos[2], pos[1]), sub(pos[3], pos[1]));
    let ang = |a: V, b: V| norm(cross(a, b)).atan2(dot(a, b));
    let n1 = cross(pij, pjk);
    let n2 = cross(pij, pjp);
    let e = pij.map(|x| x / norm(pij));
    let phi = dot(cross(n1, n2), e).atan2(dot(n1, n2));
    [norm(pij), norm(pjk), norm(pjp), ang(pij, pjk), ang(pij, pjp), phi]
}

pub fn random_branch(rng: &mut rand_chacha::ChaCha8Rng) -> [V; 4] {
    use rand::Rng;
    std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(-3.0..3.0)))
}

