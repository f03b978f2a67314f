//! Gaussian-cluster benchmark data.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::explain::ClassNames;
use crate::features::FeatureMatrix;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    /// Distance between cluster means, in units of the within-cluster σ = 1.
    pub sep: f64,
    /// Probability that a node's label is replaced by a different class.
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 300,
            d: 16,
            k: 3,
            sep: 6.0,
            label_noise: 0.05,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthData {
    pub features: FeatureMatrix,
    pub labels: Vec<usize>,
    /// Generating cluster of every node, before label noise.
    pub clusters: Vec<usize>,
    pub means: Vec<Vec<f64>>,
    pub classes: ClassNames,
}

/// Cluster means: `sep/√2 · e_c` along the first `k` axes, which puts every
/// pair exactly `sep` apart. With `k > d` the means are random directions of
/// the same norm.
pub fn cluster_means(k: usize, d: usize, sep: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let r = sep / std::f64::consts::SQRT_2;
    (0..k)
        .map(|c| {
            if k <= d {
                (0..d).map(|j| if j == c { r } else { 0.0 }).collect()
            } else {
                let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                v.into_iter().map(|x| x * r / norm).collect()
            }
        })
        .collect()
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SynthData> {
    if cfg.k < 2 || cfg.k > cfg.n {
        return Err(Error::Config(format!("need 2 <= K <= n, got K = {}, n = {}", cfg.k, cfg.n)));
    }
    if cfg.d == 0 || !(cfg.sep > 0.0) || !(0.0..=1.0).contains(&cfg.label_noise) {
        return Err(Error::Config(
            "synthetic data needs d > 0, sep > 0 and label noise in [0, 1]".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let means = cluster_means(cfg.k, cfg.d, cfg.sep, &mut rng);
    let mut clusters: Vec<usize> = (0..cfg.n).map(|i| i % cfg.k).collect();
    clusters.shuffle(&mut rng);
    let mut data = Vec::with_capacity(cfg.n * cfg.d);
    for &c in &clusters {
        for &m in &means[c] {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push(m + z);
        }
    }
    let labels = clusters
        .iter()
        .map(|&c| {
            if rng.random::<f64>() < cfg.label_noise {
                let other = rng.random_range(0..cfg.k - 1);
                if other >= c {
                    other + 1
                } else {
                    other
                }
            } else {
                c
            }
        })
        .collect();
    Ok(SynthData {
        features: FeatureMatrix::new(cfg.n, cfg.d, data)?,
        labels,
        clusters,
        means,
        classes: ClassNames::numbered(cfg.k),
    })
}
