//! Global centrality descriptors.

use std::collections::VecDeque;

use rayon::prelude::*;

use crate::graph::Graph;

/// Connected components as sorted node lists, ordered by smallest member.
pub fn connected_components(g: &Graph) -> Vec<Vec<usize>> {
    let n = g.n_nodes();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut comp = vec![s];
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for v in g.neighbor_ids(u) {
                if !seen[v] {
                    seen[v] = true;
                    comp.push(v);
                    queue.push_back(v);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct EigenCentrality {
    pub values: Vec<f64>,
    /// False when some component hit `max_iter` before meeting `tol`.
    pub converged: bool,
    pub iterations: usize,
}

/// Eigenvector centrality on `|A|`, one unit-L2 vector per connected component.
///
/// Power iteration runs on `|A| + I`, which has the same dominant eigenvector
/// as `|A|` but no sign-alternating twin, so bipartite components converge.
/// Isolated nodes score 0.
pub fn eigenvector_centrality(g: &Graph, tol: f64, max_iter: usize) -> EigenCentrality {
    let n = g.n_nodes();
    let mut values = vec![0.0; n];
    let mut converged = true;
    let mut iterations = 0;
    let mut pos = vec![usize::MAX; n];

    for comp in connected_components(g) {
        let m = comp.len();
        if m < 2 {
            continue;
        }
        for (p, &u) in comp.iter().enumerate() {
            pos[u] = p;
        }
        let mut x = vec![1.0 / (m as f64).sqrt(); m];
        let mut done = false;
        let mut it = 0;
        while it < max_iter {
            it += 1;
            let mut y: Vec<f64> = x.clone();
            for (p, &u) in comp.iter().enumerate() {
                for &(v, w) in g.neighbors(u) {
                    y[p] += w.abs() * x[pos[v]];
                }
            }
            let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                break;
            }
            y.iter_mut().for_each(|v| *v /= norm);
            let diff = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            x = y;
            if diff < tol {
                done = true;
                break;
            }
        }
        if !done {
            log::warn!("eigenvector centrality did not converge within {max_iter} iterations");
            converged = false;
        }
        iterations = iterations.max(it);
        for (p, &u) in comp.iter().enumerate() {
            values[u] = x[p];
        }
    }
    EigenCentrality {
        values,
        converged,
        iterations,
    }
}

/// Raw Brandes dependencies accumulated from a single source.
fn brandes_from(g: &Graph, s: usize) -> Vec<f64> {
    let n = g.n_nodes();
    let mut stack = Vec::with_capacity(n);
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut sigma = vec![0.0f64; n];
    let mut dist = vec![-1i64; n];
    sigma[s] = 1.0;
    dist[s] = 0;
    let mut queue = VecDeque::from([s]);
    while let Some(v) = queue.pop_front() {
        stack.push(v);
        for w in g.neighbor_ids(v) {
            if dist[w] < 0 {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
            if dist[w] == dist[v] + 1 {
                sigma[w] += sigma[v];
                preds[w].push(v);
            }
        }
    }
    let mut delta = vec![0.0f64; n];
    while let Some(w) = stack.pop() {
        for &v in &preds[w] {
            delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
        }
    }
    delta[s] = 0.0;
    delta
}

/// Betweenness over hop-count shortest paths, normalized by `(N−1)(N−2)/2`.
pub fn betweenness_centrality(g: &Graph) -> Vec<f64> {
    let n = g.n_nodes();
    if n < 3 {
        return vec![0.0; n];
    }
    let partials: Vec<Vec<f64>> = (0..n).into_par_iter().map(|s| brandes_from(g, s)).collect();
    let mut bc = vec![0.0; n];
    for p in &partials {
        for (b, d) in bc.iter_mut().zip(p) {
            *b += d;
        }
    }
    // each unordered pair is counted from both endpoints
    let norm = ((n - 1) * (n - 2)) as f64;
    bc.iter_mut().for_each(|b| *b /= norm);
    bc
}
