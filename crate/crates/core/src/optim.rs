//! First-order optimizers over a [`ParamStore`].

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub trait Optimizer {
    /// Applies one update from the gradients stored on each parameter.
    fn step(&mut self, params: &mut ParamStore) -> Result<()>;

    fn steps_taken(&self) -> u64;
}

fn require_grads(params: &ParamStore) -> Result<()> {
    for (_, p) in params.iter() {
        if p.grad.is_none() {
            return Err(Error::MissingGradient(p.name.clone()));
        }
    }
    Ok(())
}

/// Plain gradient descent: `p ← p − lr·g`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
    steps: u64,
}

impl Sgd {
    pub fn new(lr: f64) -> Self {
        assert!(lr > 0.0, "learning rate must be positive");
        Self { lr, steps: 0 }
    }
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        require_grads(params)?;
        for p in params.iter_mut() {
            let g = p.grad.as_ref().expect("checked above");
            for (v, d) in p.value.data_mut().iter_mut().zip(g.data()) {
                *v -= self.lr * d;
            }
        }
        self.steps += 1;
        Ok(())
    }

    fn steps_taken(&self) -> u64 {
        self.steps
    }
}

/// Adam with bias-corrected first and second moments.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    steps: u64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        assert!(lr > 0.0, "learning rate must be positive");
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        require_grads(params)?;
        if self.first.is_empty() {
            for (_, p) in params.iter() {
                let [r, c] = p.value.shape();
                self.first.push(Tensor::zeros(r, c));
                self.second.push(Tensor::zeros(r, c));
            }
        }
        self.steps += 1;
        let t = self.steps as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let g = p.grad.as_ref().expect("checked above");
            let values = p.value.data_mut();
            for (((x, &gi), mi), vi) in values
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *x -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    fn steps_taken(&self) -> u64 {
        self.steps
    }
}
