//! Classification metrics: accuracy, macro-F1, macro recall and
//! macro one-vs-rest ROC-AUC.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ClassMetrics {
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `None` when the class has no positives or no negatives in `y`.
    pub auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricSet {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Macro-averaged recall.
    pub sensitivity: f64,
    /// Macro one-vs-rest AUC over classes where it is defined; NaN if none is.
    pub auc: f64,
    pub per_class: Vec<ClassMetrics>,
}

/// Area under the ROC curve of `scores` for the positives in `positive`,
/// via the Mann-Whitney statistic with midranks for ties.
pub fn rank_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&o| positive[o]).count() as f64;
        i = j + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

pub fn compute_metrics(pred: &[usize], probs: &Tensor, y: &[usize], k: usize) -> Result<MetricSet> {
    let n = y.len();
    if pred.len() != n || probs.rows() != n || probs.cols() != k {
        return Err(Error::shape("compute_metrics", &[n, k], &[pred.len(), probs.rows(), probs.cols()]));
    }
    if n == 0 {
        return Err(Error::Dataset("cannot compute metrics on zero samples".into()));
    }
    if let Some(&label) = y.iter().chain(pred).find(|&&c| c >= k) {
        return Err(Error::LabelOutOfRange { label, classes: k });
    }
    let mut tp = vec![0usize; k];
    let mut fp = vec![0usize; k];
    let mut fn_ = vec![0usize; k];
    for (&p, &t) in pred.iter().zip(y) {
        if p == t {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let scores: Vec<f64> = (0..n).map(|i| probs.get(i, c)).collect();
            let positive: Vec<bool> = y.iter().map(|&t| t == c).collect();
            ClassMetrics {
                support: tp[c] + fn_[c],
                precision: ratio(tp[c], tp[c] + fp[c]),
                recall: ratio(tp[c], tp[c] + fn_[c]),
                f1: ratio(2 * tp[c], 2 * tp[c] + fp[c] + fn_[c]),
                auc: rank_auc(&scores, &positive),
            }
        })
        .collect();
    let present: Vec<&ClassMetrics> = per_class.iter().filter(|c| c.support > 0).collect();
    let mean = |f: &dyn Fn(&ClassMetrics) -> f64| present.iter().map(|c| f(c)).sum::<f64>() / present.len() as f64;
    let aucs: Vec<f64> = present.iter().filter_map(|c| c.auc).collect();
    if aucs.len() < present.len() {
        log::warn!("ROC-AUC is undefined for {} class(es); excluded from the macro mean", present.len() - aucs.len());
    }
    Ok(MetricSet {
        accuracy: tp.iter().sum::<usize>() as f64 / n as f64,
        macro_f1: mean(&|c| c.f1),
        sensitivity: mean(&|c| c.recall),
        auc: if aucs.is_empty() {
            f64::NAN
        } else {
            aucs.iter().sum::<f64>() / aucs.len() as f64
        },
        per_class,
    })
}
