//! Independent reference implementations used as test oracles.
//!
//! Everything here is written for clarity over speed and avoids calling the
//! library's own algorithms, so agreement is meaningful.

#![allow(dead_code)]

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xnode::graph::Graph;
use xnode::model::XNodeModel;
use xnode::tensor::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Undirected Erdős–Rényi graph with random signed weights bounded away from 0.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Graph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                let w: f64 = rng.random_range(0.05..1.0);
                let w = if rng.random::<f64>() < 0.2 { -w } else { w };
                edges.push((i, j, w));
            }
        }
    }
    Graph::from_edges(n, true, 0, &edges).unwrap()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Dense boolean adjacency.
pub fn adjacency(g: &Graph) -> Vec<Vec<bool>> {
    let n = g.n_nodes();
    let mut a = vec![vec![false; n]; n];
    for (i, j, _) in g.edges() {
        a[i][j] = true;
        a[j][i] = true;
    }
    a
}

/// Dense weight matrix, 0 where there is no edge.
pub fn weights(g: &Graph) -> Vec<Vec<f64>> {
    let n = g.n_nodes();
    let mut w = vec![vec![0.0; n]; n];
    for (i, j, v) in g.edges() {
        w[i][j] = v;
        w[j][i] = v;
    }
    w
}

fn hop_distances(a: &[Vec<bool>], s: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; a.len()];
    dist[s] = Some(0);
    let mut queue = VecDeque::from([s]);
    while let Some(u) = queue.pop_front() {
        for v in 0..a.len() {
            if a[u][v] && dist[v].is_none() {
                dist[v] = Some(dist[u].unwrap() + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Betweenness by listing every shortest path of every unordered pair,
/// normalized by the number of pairs not involving the node.
pub fn brute_betweenness(g: &Graph) -> Vec<f64> {
    let a = adjacency(g);
    let n = a.len();
    let mut bc = vec![0.0; n];
    if n < 3 {
        return bc;
    }
    let dists: Vec<Vec<Option<usize>>> = (0..n).map(|s| hop_distances(&a, s)).collect();
    for s in 0..n {
        for t in s + 1..n {
            let Some(d) = dists[s][t] else { continue };
            let mut paths: Vec<Vec<usize>> = Vec::new();
            let mut stack = vec![vec![s]];
            while let Some(path) = stack.pop() {
                let u = *path.last().unwrap();
                if u == t {
                    paths.push(path);
                    continue;
                }
                let du = path.len() - 1;
                for v in 0..n {
                    if a[u][v] && dists[s][v] == Some(du + 1) && dists[v][t] == Some(d - du - 1) {
                        let mut next = path.clone();
                        next.push(v);
                        stack.push(next);
                    }
                }
            }
            let total = paths.len() as f64;
            for path in &paths {
                for &v in &path[1..path.len() - 1] {
                    bc[v] += 1.0 / total;
                }
            }
        }
    }
    let pairs = ((n - 1) * (n - 2) / 2) as f64;
    bc.iter().map(|v| v / pairs).collect()
}

pub fn brute_clustering(g: &Graph) -> Vec<f64> {
    let a = adjacency(g);
    (0..a.len())
        .map(|i| {
            let nb: Vec<usize> = (0..a.len()).filter(|&j| a[i][j]).collect();
            let d = nb.len();
            if d < 2 {
                return 0.0;
            }
            let mut links = 0;
            for x in 0..d {
                for y in x + 1..d {
                    if a[nb[x]][nb[y]] {
                        links += 1;
                    }
                }
            }
            links as f64 / (d * (d - 1) / 2) as f64
        })
        .collect()
}

/// Agreement over nodes reachable in one or two steps, using only labels with `mask` set.
pub fn brute_two_hop(g: &Graph, labels: &[usize], mask: &[bool]) -> Vec<f64> {
    let a = adjacency(g);
    let n = a.len();
    (0..n)
        .map(|i| {
            if !mask[i] {
                return 0.0;
            }
            let mut labeled = 0;
            let mut same = 0;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let near = a[i][j] || (0..n).any(|m| a[i][m] && a[m][j]);
                if near && mask[j] {
                    labeled += 1;
                    if labels[j] == labels[i] {
                        same += 1;
                    }
                }
            }
            if labeled == 0 {
                0.0
            } else {
                same as f64 / labeled as f64
            }
        })
        .collect()
}

fn components(a: &[Vec<bool>]) -> Vec<Vec<usize>> {
    let n = a.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        if p[x] != x {
            let r = find(p, p[x]);
            p[x] = r;
        }
        p[x]
    }
    for i in 0..n {
        for j in 0..n {
            if a[i][j] {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                parent[ri] = rj;
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    groups.into_values().collect()
}

/// Dominant eigenvector of `|A|` per component from a dense symmetric eigensolver.
pub fn dense_eigencentrality(g: &Graph) -> Vec<f64> {
    let a = adjacency(g);
    let w = weights(g);
    let mut out = vec![0.0; a.len()];
    for comp in components(&a) {
        if comp.len() < 2 {
            continue;
        }
        let m = DMatrix::from_fn(comp.len(), comp.len(), |r, c| w[comp[r]][comp[c]].abs());
        let eig = SymmetricEigen::new(m);
        let top = (0..comp.len())
            .max_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]))
            .unwrap();
        let v = eig.eigenvectors.column(top);
        let norm = v.norm();
        for (r, &node) in comp.iter().enumerate() {
            out[node] = v[r].abs() / norm;
        }
    }
    out
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    (dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())).clamp(-1.0, 1.0)
}

/// Exhaustive top-k by cosine; equal similarities go to the lower index.
/// Returns the stored edge map: `(i, j) → w` with `i < j` when symmetrized.
pub fn brute_knn(rows: &[Vec<f64>], k: usize, symmetrize: bool) -> BTreeMap<(usize, usize), f64> {
    let n = rows.len();
    let mut edges = BTreeMap::new();
    for i in 0..n {
        let mut cands: Vec<(usize, f64)> = (0..n).filter(|&j| j != i).map(|j| (j, cos(&rows[i], &rows[j]))).collect();
        for a in 0..cands.len() {
            for b in a + 1..cands.len() {
                let (x, y) = (cands[a], cands[b]);
                if y.1 > x.1 || (y.1 == x.1 && y.0 < x.0) {
                    cands.swap(a, b);
                }
            }
        }
        for &(j, w) in &cands[..k] {
            let key = if symmetrize { (i.min(j), i.max(j)) } else { (i, j) };
            edges.insert(key, w);
        }
    }
    edges
}

pub fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut s = 0.0;
            for k in 0..a.cols() {
                s += a.get(i, k) * b.get(k, j);
            }
            out.set(i, j, s);
        }
    }
    out
}

/// Fraction of (positive, negative) pairs ranked correctly, ties counting half.
pub fn pairwise_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let mut wins = 0.0;
    let mut pairs = 0usize;
    for (i, &pi) in positive.iter().enumerate() {
        for (j, &pj) in positive.iter().enumerate() {
            if pi && !pj {
                pairs += 1;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}

pub struct OracleMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub macro_recall: f64,
    pub macro_auc: f64,
}

/// Metrics from an explicit confusion matrix and pairwise AUCs, averaged over classes present in `y`.
pub fn oracle_metrics(pred: &[usize], probs: &Tensor, y: &[usize], k: usize) -> OracleMetrics {
    let mut cm = vec![vec![0usize; k]; k];
    for (&p, &t) in pred.iter().zip(y) {
        cm[t][p] += 1;
    }
    let present: Vec<usize> = (0..k).filter(|&c| y.contains(&c)).collect();
    let mut f1 = 0.0;
    let mut recall = 0.0;
    let mut aucs = Vec::new();
    for &c in &present {
        let tp = cm[c][c] as f64;
        let row: usize = cm[c].iter().sum();
        let col: usize = (0..k).map(|r| cm[r][c]).sum();
        let precision = if col == 0 { 0.0 } else { tp / col as f64 };
        let rec = tp / row as f64;
        recall += rec;
        f1 += if precision + rec == 0.0 {
            0.0
        } else {
            2.0 * precision * rec / (precision + rec)
        };
        let scores: Vec<f64> = (0..y.len()).map(|i| probs.get(i, c)).collect();
        let pos: Vec<bool> = y.iter().map(|&t| t == c).collect();
        if let Some(a) = pairwise_auc(&scores, &pos) {
            aucs.push(a);
        }
    }
    let m = present.len() as f64;
    OracleMetrics {
        accuracy: (0..k).map(|c| cm[c][c]).sum::<usize>() as f64 / y.len() as f64,
        macro_f1: f1 / m,
        macro_recall: recall / m,
        macro_auc: if aucs.is_empty() {
            f64::NAN
        } else {
            aucs.iter().sum::<f64>() / aucs.len() as f64
        },
    }
}

/// Central differences of `loss` for every scalar of every parameter.
pub fn finite_difference(model: &XNodeModel, eps: f64, loss: impl Fn(&XNodeModel) -> f64) -> Vec<Tensor> {
    let mut probe = model.clone();
    let mut out = Vec::new();
    for p in 0..model.params.len() {
        let shape = model.params.iter().nth(p).unwrap().1.value.shape();
        let mut g = Tensor::zeros(shape[0], shape[1]);
        for idx in 0..shape[0] * shape[1] {
            let base = param_data(&probe, p)[idx];
            param_data_mut(&mut probe, p)[idx] = base + eps;
            let up = loss(&probe);
            param_data_mut(&mut probe, p)[idx] = base - eps;
            let down = loss(&probe);
            param_data_mut(&mut probe, p)[idx] = base;
            g.data_mut()[idx] = (up - down) / (2.0 * eps);
        }
        out.push(g);
    }
    out
}

fn param_data(m: &XNodeModel, p: usize) -> &[f64] {
    m.params.iter().nth(p).unwrap().1.value.data()
}

fn param_data_mut(m: &mut XNodeModel, p: usize) -> &mut [f64] {
    m.params.iter_mut().nth(p).unwrap().value.data_mut()
}

/// `|a − b| / max(|a|, |b|, floor)`; the floor keeps exact zeros from dividing by zero.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Random permutation of `0..n`.
pub fn permutation(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}
