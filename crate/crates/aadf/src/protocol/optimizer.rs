//! AdamW with decoupled weight decay applied before the adaptive step, plus
//! global-norm gradient clipping.

use crate::util::kahan_sum;

#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamW {
    pub fn new(dim: usize, lr: f64, weight_decay: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            weight_decay,
            beta1,
            beta2,
            eps,
            t: 0,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
        }
    }

    /// One update: params <- params * (1 - lr * wd), then bias-corrected
    /// adaptive step.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let decay = 1.0 - self.lr * self.weight_decay;
        for i in 0..params.len() {
            params[i] *= decay;
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Euclidean norm of a gradient vector.
pub fn global_norm(grads: &[f64]) -> f64 {
    kahan_sum(grads.iter().map(|&g| g * g)).sqrt()
}

/// Scale gradients in place so the global norm is at most `clip`; gradients
/// already below the threshold pass unscaled. Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [f64], clip: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > clip && norm > 0.0 {
        let scale = clip / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
    norm
}
