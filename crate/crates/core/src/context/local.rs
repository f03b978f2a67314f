//! Per-node descriptors that only look at a node's neighborhood.
//!
//! All functions treat the graph as undirected; callers pass a symmetrized
//! graph (see [`Graph::symmetrized`]).

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::graph::Graph;

use super::LabelSet;

fn check(g: &Graph, i: usize) -> Result<()> {
    if i >= g.n_nodes() {
        return Err(Error::NodeOutOfRange { node: i, n: g.n_nodes() });
    }
    Ok(())
}

/// Number of distinct neighbors.
pub fn degree(g: &Graph, i: usize) -> Result<usize> {
    check(g, i)?;
    Ok(g.out_degree(i))
}

/// Edges among neighbors over `deg·(deg−1)/2`; 0 below degree 2.
pub fn clustering_coefficient(g: &Graph, i: usize) -> Result<f64> {
    check(g, i)?;
    let nbrs: Vec<usize> = g.neighbor_ids(i).collect();
    let d = nbrs.len();
    if d < 2 {
        return Ok(0.0);
    }
    let mut links = 0usize;
    for (a, &u) in nbrs.iter().enumerate() {
        for &v in &nbrs[a + 1..] {
            if g.has_edge(u, v) {
                links += 1;
            }
        }
    }
    Ok(links as f64 / (d * (d - 1) / 2) as f64)
}

/// Fraction of labeled nodes within two hops (excluding `i`) that share
/// `i`'s label. Only training-visible labels count, including `i`'s own:
/// an unlabeled `i`, or one with no labeled node in range, scores 0.
pub fn two_hop_label_agreement(g: &Graph, labels: &LabelSet, i: usize) -> Result<f64> {
    check(g, i)?;
    let Some(own) = labels.visible(i) else {
        return Ok(0.0);
    };
    let mut dist = vec![u8::MAX; g.n_nodes()];
    dist[i] = 0;
    let mut queue = VecDeque::from([i]);
    let (mut labeled, mut same) = (0usize, 0usize);
    while let Some(u) = queue.pop_front() {
        if dist[u] == 2 {
            continue;
        }
        for v in g.neighbor_ids(u) {
            if dist[v] != u8::MAX {
                continue;
            }
            dist[v] = dist[u] + 1;
            queue.push_back(v);
            if let Some(y) = labels.visible(v) {
                labeled += 1;
                if y == own {
                    same += 1;
                }
            }
        }
    }
    Ok(if labeled == 0 {
        0.0
    } else {
        same as f64 / labeled as f64
    })
}

/// Mean incident edge weight; 0 for an isolated node.
pub fn average_edge_weight(g: &Graph, i: usize) -> Result<f64> {
    check(g, i)?;
    let nbrs = g.neighbors(i);
    if nbrs.is_empty() {
        return Ok(0.0);
    }
    Ok(nbrs.iter().map(|&(_, w)| w).sum::<f64>() / nbrs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle() -> Graph {
        Graph::from_edges(3, true, 0, &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)]).unwrap()
    }

    fn star() -> Graph {
        Graph::from_edges(4, true, 0, &[(0, 1, 0.8), (0, 2, 1.0), (0, 3, 0.9)]).unwrap()
    }

    #[test]
    fn degree_cases() {
        assert_eq!(degree(&Graph::empty(2, true), 1).unwrap(), 0);
        assert_eq!(degree(&triangle(), 0).unwrap(), 2);
        assert!(matches!(degree(&triangle(), 3), Err(Error::NodeOutOfRange { node: 3, n: 3 })));
    }

    #[test]
    fn clustering_cases() {
        assert_eq!(clustering_coefficient(&triangle(), 1).unwrap(), 1.0);
        assert_eq!(clustering_coefficient(&star(), 0).unwrap(), 0.0);
        assert_eq!(clustering_coefficient(&star(), 1).unwrap(), 0.0);
    }

    #[test]
    fn average_weight_cases() {
        assert_eq!(average_edge_weight(&triangle(), 0).unwrap(), 1.0);
        let g = Graph::from_edges(3, true, 0, &[(0, 1, 0.8), (0, 2, 1.0)]).unwrap();
        assert!((average_edge_weight(&g, 0).unwrap() - 0.9).abs() < 1e-15);
        assert_eq!(average_edge_weight(&Graph::empty(1, true), 0).unwrap(), 0.0);
    }

    #[test]
    fn agreement_cases() {
        let g = star();
        let all = LabelSet::new(vec![1, 1, 1, 1], vec![true; 4]).unwrap();
        assert_eq!(two_hop_label_agreement(&g, &all, 2).unwrap(), 1.0);

        let none = LabelSet::new(vec![1, 1, 1, 1], vec![true, false, false, false]).unwrap();
        assert_eq!(two_hop_label_agreement(&g, &none, 0).unwrap(), 0.0);

        // leaf 1 sees center (label 0) at 1 hop and leaves 2, 3 at 2 hops
        let mixed = LabelSet::new(vec![0, 1, 1, 0], vec![true; 4]).unwrap();
        assert!((two_hop_label_agreement(&g, &mixed, 1).unwrap() - 1.0 / 3.0).abs() < 1e-15);

        // unlabeled node scores 0 even with labeled neighbors
        let hidden = LabelSet::new(vec![0, 0, 0, 0], vec![false, true, true, true]).unwrap();
        assert_eq!(two_hop_label_agreement(&g, &hidden, 0).unwrap(), 0.0);
    }
}
