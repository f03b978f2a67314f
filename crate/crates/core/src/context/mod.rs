//! Interpretable per-node context vectors.
//!
//! Each node is summarized by seven topological and label-aware descriptors,
//! in this fixed numeric order:
//!
//! | # | key                  | range          |
//! |---|----------------------|----------------|
//! | 0 | degree               | count          |
//! | 1 | clustering           | [0, 1]         |
//! | 2 | two-hop agreement    | [0, 1]         |
//! | 3 | eigencentrality      | ≥ 0            |
//! | 4 | betweenness          | [0, 1]         |
//! | 5 | average edge weight  | [−1, 1]        |
//! | 6 | community id         | integer        |
//!
//! The most salient raw feature (argmax index and value) rides along in the
//! key-value view used for prompts but is not part of the numeric vector.

mod centrality;
mod community;
mod local;
mod normalize;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

pub use centrality::{betweenness_centrality, connected_components, eigenvector_centrality, EigenCentrality};
pub use community::{community_membership, MAX_SWEEPS};
pub use local::{average_edge_weight, clustering_coefficient, degree, two_hop_label_agreement};
pub use normalize::ContextNorm;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::graph::Graph;
use crate::tensor::Tensor;

/// Width of the numeric context vector.
pub const CONTEXT_DIM: usize = 7;

pub const EIGEN_TOL: f64 = 1e-8;
pub const EIGEN_MAX_ITER: usize = 1000;

/// Column names of the context CSV export.
pub const CSV_HEADER: &str =
    "node,degree,clustering,two_hop_agreement,eigencentrality,betweenness,avg_edge_weight,community,top_feat_idx,top_feat_val";

/// Class labels with a visibility mask. Labels outside the mask are never read.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelSet {
    labels: Vec<usize>,
    mask: Vec<bool>,
}

impl LabelSet {
    pub fn new(labels: Vec<usize>, mask: Vec<bool>) -> Result<Self> {
        if labels.len() != mask.len() {
            return Err(Error::shape("label_set", &[labels.len()], &[mask.len()]));
        }
        Ok(Self { labels, mask })
    }

    /// Every node unlabeled.
    pub fn hidden(n: usize) -> Self {
        Self {
            labels: vec![0; n],
            mask: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn visible(&self, i: usize) -> Option<usize> {
        self.mask[i].then_some(self.labels[i])
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            labels: perm.iter().map(|&p| self.labels[p]).collect(),
            mask: perm.iter().map(|&p| self.mask[p]).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContextVector {
    pub degree: usize,
    pub clustering: f64,
    pub two_hop_agreement: f64,
    pub eigencentrality: f64,
    pub betweenness: f64,
    pub avg_edge_weight: f64,
    pub community: usize,
    /// `(feature index, value)` of the largest raw feature, when features are known.
    pub top_feature: Option<(usize, f64)>,
}

impl ContextVector {
    pub fn to_array(&self) -> [f64; CONTEXT_DIM] {
        [
            self.degree as f64,
            self.clustering,
            self.two_hop_agreement,
            self.eigencentrality,
            self.betweenness,
            self.avg_edge_weight,
            self.community as f64,
        ]
    }

    /// Labeled view: counts verbatim, floats with three decimals.
    pub fn key_values(&self) -> Vec<(&'static str, String)> {
        let f = |v: f64| format!("{v:.3}");
        let mut kv = vec![
            ("degree", self.degree.to_string()),
            ("clustering coefficient", f(self.clustering)),
            ("2-hop label agreement", f(self.two_hop_agreement)),
            ("eigenvector centrality", f(self.eigencentrality)),
            ("betweenness centrality", f(self.betweenness)),
            ("average edge weight", f(self.avg_edge_weight)),
            ("community", self.community.to_string()),
        ];
        if let Some((idx, val)) = self.top_feature {
            kv.push(("top feature", format!("F[{idx}]={val:.3}")));
        }
        kv
    }
}

/// Descriptors for every node plus the stacked `N × 7` numeric matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextSet {
    pub contexts: Vec<ContextVector>,
    pub eigen_converged: bool,
}

impl ContextSet {
    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }

    pub fn matrix(&self) -> Tensor {
        let rows: Vec<Vec<f64>> = self.contexts.iter().map(|c| c.to_array().to_vec()).collect();
        if rows.is_empty() {
            return Tensor::zeros(0, CONTEXT_DIM);
        }
        Tensor::from_rows(&rows).expect("fixed width")
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for (i, c) in self.contexts.iter().enumerate() {
            let (ti, tv) = match c.top_feature {
                Some((a, b)) => (a.to_string(), b.to_string()),
                None => (String::new(), String::new()),
            };
            let _ = writeln!(
                s,
                "{i},{},{},{},{},{},{},{},{ti},{tv}",
                c.degree,
                c.clustering,
                c.two_hop_agreement,
                c.eigencentrality,
                c.betweenness,
                c.avg_edge_weight,
                c.community
            );
        }
        s
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::parse_csv(&fs::read_to_string(path)?, Some(path))
    }

    pub fn parse_csv(text: &str, path: Option<&Path>) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == CSV_HEADER => {}
            _ => return Err(Error::parse(path, 1, "missing context CSV header")),
        }
        let mut contexts = Vec::new();
        for (idx, line) in lines {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 10 {
                return Err(Error::parse(path, line_no, format!("expected 10 columns, found {}", cols.len())));
            }
            let bad = |what: &str| Error::parse(path, line_no, format!("bad {what}"));
            let node: usize = cols[0].parse().map_err(|_| bad("node"))?;
            if node != contexts.len() {
                return Err(Error::parse(path, line_no, format!("expected node {}, found {node}", contexts.len())));
            }
            let num = |i: usize, what: &str| -> Result<f64> { cols[i].parse().map_err(|_| bad(what)) };
            let top_feature = if cols[8].is_empty() && cols[9].is_empty() {
                None
            } else {
                Some((cols[8].parse().map_err(|_| bad("top_feat_idx"))?, num(9, "top_feat_val")?))
            };
            contexts.push(ContextVector {
                degree: cols[1].parse().map_err(|_| bad("degree"))?,
                clustering: num(2, "clustering")?,
                two_hop_agreement: num(3, "two_hop_agreement")?,
                eigencentrality: num(4, "eigencentrality")?,
                betweenness: num(5, "betweenness")?,
                avg_edge_weight: num(6, "avg_edge_weight")?,
                community: cols[7].parse().map_err(|_| bad("community"))?,
                top_feature,
            });
        }
        Ok(Self {
            contexts,
            eigen_converged: true,
        })
    }
}

/// Computes graph-global descriptors once and hands out per-node contexts.
pub struct ContextBuilder<'a> {
    graph: Graph,
    labels: &'a LabelSet,
    features: Option<&'a FeatureMatrix>,
    eigen: EigenCentrality,
    betweenness: Vec<f64>,
    communities: Vec<usize>,
}

impl<'a> ContextBuilder<'a> {
    pub fn new(g: &Graph, labels: &'a LabelSet, features: Option<&'a FeatureMatrix>, seed: u64) -> Result<Self> {
        let n = g.n_nodes();
        if labels.len() != n {
            return Err(Error::shape("contexts", &[n], &[labels.len()]));
        }
        if let Some(x) = features {
            if x.n_nodes() != n {
                return Err(Error::shape("contexts", &[n], &[x.n_nodes()]));
            }
        }
        let graph = g.symmetrized();
        let eigen = eigenvector_centrality(&graph, EIGEN_TOL, EIGEN_MAX_ITER);
        let betweenness = betweenness_centrality(&graph);
        let communities = community_membership(&graph, seed);
        Ok(Self {
            graph,
            labels,
            features,
            eigen,
            betweenness,
            communities,
        })
    }

    pub fn context(&self, i: usize) -> Result<ContextVector> {
        let g = &self.graph;
        Ok(ContextVector {
            degree: degree(g, i)?,
            clustering: clustering_coefficient(g, i)?,
            two_hop_agreement: two_hop_label_agreement(g, self.labels, i)?,
            eigencentrality: self.eigen.values[i],
            betweenness: self.betweenness[i],
            avg_edge_weight: average_edge_weight(g, i)?,
            community: self.communities[i],
            top_feature: self.features.map(|x| x.top_feature(i)),
        })
    }

    pub fn all(&self) -> Result<ContextSet> {
        let contexts = (0..self.graph.n_nodes())
            .map(|i| self.context(i))
            .collect::<Result<_>>()?;
        Ok(ContextSet {
            contexts,
            eigen_converged: self.eigen.converged,
        })
    }
}

/// Context vector of a single node.
pub fn build_context(
    g: &Graph,
    labels: &LabelSet,
    features: Option<&FeatureMatrix>,
    i: usize,
    seed: u64,
) -> Result<ContextVector> {
    ContextBuilder::new(g, labels, features, seed)?.context(i)
}

/// Context vectors of every node.
pub fn build_all_contexts(
    g: &Graph,
    labels: &LabelSet,
    features: Option<&FeatureMatrix>,
    seed: u64,
) -> Result<ContextSet> {
    ContextBuilder::new(g, labels, features, seed)?.all()
}
