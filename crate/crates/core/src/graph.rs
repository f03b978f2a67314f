//! Weighted kNN graphs over node features.
//!
//! Each node links to the `k` other nodes with the highest cosine similarity;
//! edge weights are those cosine values. Ties are broken toward the lower node
//! index. With `symmetrize`, the directed selection is mirrored by union.
//!
//! File format (UTF-8):
//!
//! ```text
//! xnode-graph v1 <N> <symmetric:0|1> <k>
//! <i>\t<j>\t<w>
//! ```
//!
//! one edge per line, `i < j` for symmetric graphs, weights written with 17
//! significant digits.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

const HEADER: &str = "xnode-graph";

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `dot(a, b) / (‖a‖‖b‖)`, clamped to `[-1, 1]`.
///
/// A zero-norm argument yields [`Error::DegenerateFeature`] carrying the
/// argument position (0 or 1).
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("cosine_similarity", &[a.len()], &[b.len()]));
    }
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 {
        return Err(Error::DegenerateFeature(0));
    }
    if nb == 0.0 {
        return Err(Error::DegenerateFeature(1));
    }
    Ok(cosine_with_norms(a, b, na, nb))
}

fn cosine_with_norms(a: &[f64], b: &[f64], na: f64, nb: f64) -> f64 {
    // `+ 0.0` turns a −0.0 into 0.0 so orthogonal pairs tie under `total_cmp`.
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0) + 0.0
}

/// Sparse weighted adjacency. Neighbor lists are sorted by node index and
/// never contain the node itself.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n: usize,
    symmetric: bool,
    k: usize,
    adj: Vec<Vec<(usize, f64)>>,
}

impl Graph {
    /// Builds a graph from `(i, j, w)` edges. For symmetric graphs each
    /// undirected edge is listed once and mirrored automatically.
    pub fn from_edges(n: usize, symmetric: bool, k: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut maps: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
        for &(i, j, w) in edges {
            if i >= n || j >= n {
                return Err(Error::NodeOutOfRange { node: i.max(j), n });
            }
            if i == j {
                return Err(Error::InvalidGraph(format!("self-loop on node {i}")));
            }
            if !w.is_finite() {
                return Err(Error::InvalidGraph(format!("non-finite weight on edge ({i}, {j})")));
            }
            let dup = maps[i].insert(j, w).is_some();
            if dup {
                return Err(Error::InvalidGraph(format!("duplicate edge ({i}, {j})")));
            }
            if symmetric && maps[j].insert(i, w).is_some() {
                return Err(Error::InvalidGraph(format!("duplicate edge ({j}, {i})")));
            }
        }
        Ok(Self {
            n,
            symmetric,
            k,
            adj: maps.into_iter().map(|m| m.into_iter().collect()).collect(),
        })
    }

    /// A graph with `n` nodes and no edges.
    pub fn empty(n: usize, symmetric: bool) -> Self {
        Self {
            n,
            symmetric,
            k: 0,
            adj: vec![Vec::new(); n],
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Outgoing neighbors with weights, sorted by index.
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adj[i]
    }

    pub fn neighbor_ids(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.adj[i].iter().map(|&(j, _)| j)
    }

    pub fn out_degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        self.adj[i]
            .binary_search_by_key(&j, |&(x, _)| x)
            .ok()
            .map(|p| self.adj[i][p].1)
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.weight(i, j).is_some()
    }

    /// Edges as stored in files: `i < j` when symmetric, every arc otherwise.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for (i, nbrs) in self.adj.iter().enumerate() {
            for &(j, w) in nbrs {
                if !self.symmetric || i < j {
                    out.push((i, j, w));
                }
            }
        }
        out
    }

    pub fn num_edges(&self) -> usize {
        let arcs: usize = self.adj.iter().map(Vec::len).sum();
        if self.symmetric {
            arcs / 2
        } else {
            arcs
        }
    }

    /// Union of each arc and its reverse. Identity for symmetric graphs.
    pub fn symmetrized(&self) -> Graph {
        if self.symmetric {
            return self.clone();
        }
        let mut maps: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); self.n];
        for (i, nbrs) in self.adj.iter().enumerate() {
            for &(j, w) in nbrs {
                maps[i].insert(j, w);
                maps[j].entry(i).or_insert(w);
            }
        }
        Graph {
            n: self.n,
            symmetric: true,
            k: self.k,
            adj: maps.into_iter().map(|m| m.into_iter().collect()).collect(),
        }
    }

    /// Relabels nodes so that new node `i` is old node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Graph {
        let mut inverse = vec![0; self.n];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let adj = perm
            .iter()
            .map(|&old| {
                let mut v: Vec<(usize, f64)> = self.adj[old].iter().map(|&(j, w)| (inverse[j], w)).collect();
                v.sort_by_key(|&(j, _)| j);
                v
            })
            .collect();
        Graph {
            n: self.n,
            symmetric: self.symmetric,
            k: self.k,
            adj,
        }
    }

    /// Checks that every stored weight equals the cosine of its endpoints' features.
    pub fn verify_weights(&self, x: &FeatureMatrix, tol: f64) -> Result<()> {
        if x.n_nodes() != self.n {
            return Err(Error::shape("verify_weights", &[self.n], &[x.n_nodes()]));
        }
        for (i, nbrs) in self.adj.iter().enumerate() {
            for &(j, w) in nbrs {
                let c = cosine_similarity(x.row(i), x.row(j)).map_err(|_| Error::DegenerateFeature(i))?;
                if (c - w).abs() > tol {
                    return Err(Error::InvalidGraph(format!(
                        "edge ({i}, {j}) has weight {w} but features give cosine {c}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "{HEADER} v1 {} {} {}", self.n, u8::from(self.symmetric), self.k)?;
        for (i, j, w) in self.edges() {
            writeln!(out, "{i}\t{j}\t{w:.16e}")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text, Some(path))
    }

    pub fn parse(text: &str, path: Option<&Path>) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 1, "empty graph file"))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 5 || parts[0] != HEADER || parts[1] != "v1" {
            return Err(Error::parse(path, 1, format!("bad header `{header}`")));
        }
        let field = |s: &str, what: &str| -> Result<usize> {
            s.parse().map_err(|_| Error::parse(path, 1, format!("bad {what} `{s}`")))
        };
        let n = field(parts[2], "node count")?;
        let symmetric = match parts[3] {
            "0" => false,
            "1" => true,
            other => return Err(Error::parse(path, 1, format!("bad symmetric flag `{other}`"))),
        };
        let k = field(parts[4], "k")?;

        let mut g = Graph::empty(n, symmetric);
        g.k = k;
        let mut maps: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
        for (idx, line) in lines {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(Error::parse(path, line_no, "expected `i<TAB>j<TAB>w`"));
            }
            let parse_node = |s: &str| -> Result<usize> {
                let v: usize = s
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(path, line_no, format!("bad node id `{s}`")))?;
                if v >= n {
                    return Err(Error::parse(path, line_no, format!("node {v} out of range")));
                }
                Ok(v)
            };
            let i = parse_node(cols[0])?;
            let j = parse_node(cols[1])?;
            let w: f64 = cols[2]
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, line_no, format!("bad weight `{}`", cols[2])))?;
            if !w.is_finite() {
                return Err(Error::parse(path, line_no, "non-finite weight"));
            }
            if i == j {
                return Err(Error::parse(path, line_no, "self-loop"));
            }
            if symmetric && i > j {
                return Err(Error::parse(path, line_no, "symmetric graphs list edges with i < j"));
            }
            if maps[i].insert(j, w).is_some() {
                return Err(Error::parse(path, line_no, format!("duplicate edge ({i}, {j})")));
            }
            if symmetric {
                maps[j].insert(i, w);
            }
        }
        g.adj = maps.into_iter().map(|m| m.into_iter().collect()).collect();
        Ok(g)
    }
}

/// Exact kNN graph under cosine similarity.
pub fn build_knn_graph(x: &FeatureMatrix, k: usize, symmetrize: bool) -> Result<Graph> {
    let n = x.n_nodes();
    if k == 0 || k >= n {
        return Err(Error::InvalidK { k, n });
    }
    let norms: Vec<f64> = x.rows().map(|r| dot(r, r).sqrt()).collect();
    if let Some(i) = norms.iter().position(|&v| v == 0.0) {
        return Err(Error::DegenerateFeature(i));
    }

    let selected: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let fi = x.row(i);
            let mut sims: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, cosine_with_norms(fi, x.row(j), norms[i], norms[j])))
                .collect();
            sims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            sims.truncate(k);
            sims
        })
        .collect();

    let mut edges = Vec::with_capacity(n * k);
    if symmetrize {
        let mut seen = std::collections::BTreeSet::new();
        for (i, nbrs) in selected.iter().enumerate() {
            for &(j, w) in nbrs {
                let key = (i.min(j), i.max(j));
                if seen.insert(key) {
                    edges.push((key.0, key.1, w));
                }
            }
        }
    } else {
        for (i, nbrs) in selected.iter().enumerate() {
            edges.extend(nbrs.iter().map(|&(j, w)| (i, j, w)));
        }
    }
    Graph::from_edges(n, symmetrize, k, &edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_cases() {
        assert!((cosine_similarity(&[2.0, 1.0], &[2.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]),
            Err(Error::DegenerateFeature(0))
        ));
    }

    #[test]
    fn signed_zero_cosines_tie() {
        // cos(x0, x1) can evaluate to −0.0 while cos(x0, x2) is +0.0.
        let x = FeatureMatrix::from_rows(&[vec![0.0, -1.0], vec![-1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let g = build_knn_graph(&x, 1, false).unwrap();
        assert_eq!(g.neighbor_ids(0).collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn identical_rows_make_triangle() {
        let x = FeatureMatrix::from_rows(&vec![vec![1.0, 2.0]; 3]).unwrap();
        let g = build_knn_graph(&x, 2, true).unwrap();
        assert_eq!(g.num_edges(), 3);
        for (_, _, w) in g.edges() {
            assert!((w - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn k_bounds_and_degenerate_rows() {
        let x = FeatureMatrix::from_rows(&[vec![1.0], vec![2.0], vec![0.0]]).unwrap();
        assert!(matches!(build_knn_graph(&x, 3, true), Err(Error::InvalidK { .. })));
        assert!(matches!(build_knn_graph(&x, 1, true), Err(Error::DegenerateFeature(2))));
    }

    #[test]
    fn directed_out_degree_is_k() {
        let x = FeatureMatrix::from_rows(&[vec![1.0, 0.1], vec![0.9, 0.3], vec![0.0, 1.0], vec![0.2, 0.8], vec![0.5, 0.5]]).unwrap();
        let g = build_knn_graph(&x, 2, false).unwrap();
        assert!((0..5).all(|i| g.out_degree(i) == 2));
        g.verify_weights(&x, 0.0).unwrap();
        let s = g.symmetrized();
        for (i, j, w) in s.edges() {
            assert_eq!(s.weight(j, i), Some(w));
        }
    }

    #[test]
    fn parse_rejects_duplicate_edge() {
        let text = "xnode-graph v1 3 1 1\n0\t1\t0.5\n1\t2\t0.1\n0\t1\t0.5\n";
        let err = Graph::parse(text, None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }), "{err}");
    }

    #[test]
    fn parse_rejects_garbage_with_line() {
        let err = Graph::parse("xnode-graph v1 3 1 1\n0\tx\t0.5\n", None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn empty_graph_round_trips() {
        let g = Graph::empty(4, true);
        let mut buf = Vec::new();
        g.write_to(&mut buf).unwrap();
        assert_eq!(Graph::parse(std::str::from_utf8(&buf).unwrap(), None).unwrap(), g);
    }
}
