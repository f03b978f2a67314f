use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-column z-score statistics fit on the training rows only.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ContextNorm {
    /// Population mean and standard deviation of the rows where `mask` is set.
    pub fn fit(contexts: &Tensor, mask: &[bool]) -> Result<Self> {
        if mask.len() != contexts.rows() {
            return Err(Error::shape("normalize_contexts", &contexts.shape(), &[mask.len()]));
        }
        let rows: Vec<usize> = (0..contexts.rows()).filter(|&r| mask[r]).collect();
        if rows.len() < 2 {
            return Err(Error::Config(format!(
                "context normalization needs at least 2 training rows, got {}",
                rows.len()
            )));
        }
        let m = rows.len() as f64;
        let cols = contexts.cols();
        let mut mean = vec![0.0; cols];
        let mut std = vec![0.0; cols];
        for c in 0..cols {
            mean[c] = rows.iter().map(|&r| contexts.get(r, c)).sum::<f64>() / m;
            let var = rows
                .iter()
                .map(|&r| (contexts.get(r, c) - mean[c]).powi(2))
                .sum::<f64>()
                / m;
            std[c] = var.sqrt();
        }
        Ok(Self { mean, std })
    }

    /// `(x − mean) / std`; zero-variance columns map to 0.
    pub fn apply(&self, contexts: &Tensor) -> Tensor {
        Tensor::from_fn(contexts.rows(), contexts.cols(), |r, c| {
            if self.std[c] > 0.0 {
                (contexts.get(r, c) - self.mean[c]) / self.std[c]
            } else {
                0.0
            }
        })
    }
}
