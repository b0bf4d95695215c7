use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adaptive-moment gradient descent with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<S> {
    config: AdamConfig,
    first: Vec<Vec<S>>,
    second: Vec<Vec<S>>,
    steps: u64,
}

impl<S: Scalar> Adam<S> {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, first: Vec::new(), second: Vec::new(), steps: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update. `grads[i]` must match `params[i]` in length.
    /// Moment buffers are zero-initialized on the first call.
    pub fn step(&mut self, params: &mut [&mut Tensor<S>], grads: &[Vec<S>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape { op: "optimizer_step", detail: format!("{} params, {} grads", params.len(), grads.len()) });
        }
        for (p, g) in params.iter().zip(grads) {
            if p.len() != g.len() {
                return Err(Error::Shape { op: "optimizer_step", detail: format!("param len {} vs grad len {}", p.len(), g.len()) });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { op: "optimizer_step" });
            }
        }
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| vec![S::zero(); g.len()]).collect();
            self.second = self.first.clone();
        }
        self.steps += 1;
        let c = &self.config;
        let (b1, b2) = (S::lit(c.beta1), S::lit(c.beta2));
        let (lr, eps) = (S::lit(c.lr), S::lit(c.eps));
        let t = self.steps as i32;
        let correct1 = S::one() - b1.powi(t);
        let correct2 = S::one() - b2.powi(t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.first.iter_mut().zip(self.second.iter_mut())) {
            for (i, value) in p.values_mut().iter_mut().enumerate() {
                m[i] = b1 * m[i] + (S::one() - b1) * g[i];
                v[i] = b2 * v[i] + (S::one() - b2) * g[i] * g[i];
                let m_hat = m[i] / correct1;
                let v_hat = v[i] / correct2;
                *value -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
