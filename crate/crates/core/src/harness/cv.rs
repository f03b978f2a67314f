//! Repeated k-fold cross-validation splits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::split::Split;

#[derive(Clone, Debug, PartialEq)]
pub struct CvPlan {
    pub folds: usize,
    pub seeds: Vec<u64>,
    /// Share of each fold's non-test nodes used for training; the rest validate.
    pub train_frac: f64,
}

impl Default for CvPlan {
    fn default() -> Self {
        Self {
            folds: 3,
            seeds: vec![42, 43, 44],
            train_frac: 0.8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvRun {
    pub seed: u64,
    pub fold: usize,
    pub split: Split,
}

/// Splits for one seed: a seeded permutation cut into contiguous folds whose
/// sizes differ by at most one. Each fold in turn is the test set and the
/// remaining nodes, still in permutation order, are cut into train and val.
pub fn seed_splits(n: usize, seed: u64, folds: usize, train_frac: f64) -> Result<Vec<Split>> {
    if folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {folds}")));
    }
    if !(train_frac > 0.0 && train_frac <= 1.0) {
        return Err(Error::Config(format!("train fraction must be in (0, 1], got {train_frac}")));
    }
    if n < 10 || n < folds * 2 {
        return Err(Error::Dataset(format!("{n} nodes are too few for {folds}-fold cross-validation")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / folds, n % folds);
    let mut bounds = vec![0];
    for f in 0..folds {
        bounds.push(bounds[f] + base + usize::from(f < extra));
    }
    Ok((0..folds)
        .map(|f| {
            let test = perm[bounds[f]..bounds[f + 1]].to_vec();
            let pool: Vec<usize> = perm[..bounds[f]].iter().chain(&perm[bounds[f + 1]..]).copied().collect();
            let n_train = ((pool.len() as f64 * train_frac).round() as usize).clamp(1, pool.len());
            Split::new(pool[..n_train].to_vec(), pool[n_train..].to_vec(), test)
        })
        .collect())
}

/// Every `(seed, fold)` experiment of the plan, seed-major.
pub fn make_cv_splits(n: usize, plan: &CvPlan) -> Result<Vec<CvRun>> {
    let mut runs = Vec::with_capacity(plan.seeds.len() * plan.folds);
    for &seed in &plan.seeds {
        for (fold, split) in seed_splits(n, seed, plan.folds, plan.train_frac)?.into_iter().enumerate() {
            runs.push(CvRun { seed, fold, split });
        }
    }
    Ok(runs)
}
