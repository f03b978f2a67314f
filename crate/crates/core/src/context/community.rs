//! Deterministic label propagation.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::graph::Graph;

pub const MAX_SWEEPS: usize = 100;

/// Synchronous label propagation.
///
/// Initial labels are a seeded permutation of node ids. Each sweep, every node
/// takes the most frequent label among itself and its neighbors, computed from
/// the previous sweep's labels; ties go to the smallest label. Counting the
/// node's own label prevents two-node label swapping. Stops at a fixed point
/// or after [`MAX_SWEEPS`]. Labels are renumbered `0..C` by first appearance
/// in node order.
pub fn community_membership(g: &Graph, seed: u64) -> Vec<usize> {
    let n = g.n_nodes();
    let mut labels: Vec<usize> = (0..n).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut counts: HashMap<usize, usize> = HashMap::new();
    for _ in 0..MAX_SWEEPS {
        let mut next = labels.clone();
        for (i, slot) in next.iter_mut().enumerate() {
            counts.clear();
            *counts.entry(labels[i]).or_default() += 1;
            for j in g.neighbor_ids(i) {
                *counts.entry(labels[j]).or_default() += 1;
            }
            *slot = counts
                .iter()
                .map(|(&l, &c)| (c, std::cmp::Reverse(l)))
                .max()
                .map(|(_, std::cmp::Reverse(l))| l)
                .expect("own label is always counted");
        }
        if next == labels {
            break;
        }
        labels = next;
    }
    renumber(&labels)
}

fn renumber(labels: &[usize]) -> Vec<usize> {
    let mut map = HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clique_edges(nodes: std::ops::Range<usize>) -> Vec<(usize, usize, f64)> {
        let v: Vec<usize> = nodes.collect();
        let mut e = Vec::new();
        for (a, &i) in v.iter().enumerate() {
            for &j in &v[a + 1..] {
                e.push((i, j, 1.0));
            }
        }
        e
    }

    #[test]
    fn two_triangles() {
        let mut e = clique_edges(0..3);
        e.extend(clique_edges(3..6));
        let g = Graph::from_edges(6, true, 0, &e).unwrap();
        for seed in 0..5 {
            assert_eq!(community_membership(&g, seed), vec![0, 0, 0, 1, 1, 1]);
        }
    }

    #[test]
    fn complete_graph_is_one_community() {
        let g = Graph::from_edges(7, true, 0, &clique_edges(0..7)).unwrap();
        assert!(community_membership(&g, 42).iter().all(|&c| c == 0));
    }

    #[test]
    fn single_edge_does_not_oscillate() {
        let g = Graph::from_edges(2, true, 0, &[(0, 1, 1.0)]).unwrap();
        assert_eq!(community_membership(&g, 3), vec![0, 0]);
    }

    #[test]
    fn isolated_nodes_keep_their_own_label() {
        assert_eq!(community_membership(&Graph::empty(3, true), 1), vec![0, 1, 2]);
    }
}
