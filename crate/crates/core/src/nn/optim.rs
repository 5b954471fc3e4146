use serde::{Deserialize, Serialize};

use super::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWParams {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWParams {
    fn default() -> Self {
        AdamWParams {
            lr: 1e-3,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamWParams {
    /// Plain Adam: the same update with no weight decay.
    pub fn adam(lr: f64) -> Self {
        AdamWParams {
            lr,
            weight_decay: 0.0,
            ..Self::default()
        }
    }
}

/// Adam with decoupled weight decay:
///
/// ```text
/// theta <- theta - lr * wd * theta
/// m <- b1 m + (1 - b1) g;  v <- b2 v + (1 - b2) g^2
/// theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)
/// ```
#[derive(Debug, Clone)]
pub struct AdamW {
    pub hp: AdamWParams,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamW {
    pub fn new(hp: AdamWParams) -> Self {
        AdamW {
            hp,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update of every parameter in `store` from its accumulated grad,
    /// using learning rate `lr` (which overrides `hp.lr`).
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) {
        if self.m.is_empty() {
            self.m = store.ids().map(|id| vec![0.0; store.value(id).len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let hp = self.hp;
        let bc1 = 1.0 - hp.beta1.powi(self.t as i32);
        let bc2 = 1.0 - hp.beta2.powi(self.t as i32);
        for (((theta, g), m), v) in store
            .values_and_grads_mut()
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for (((p, gi), mi), vi) in theta.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                if hp.weight_decay != 0.0 {
                    *p -= lr * hp.weight_decay * *p;
                }
                *mi = hp.beta1 * *mi + (1.0 - hp.beta1) * gi;
                *vi = hp.beta2 * *vi + (1.0 - hp.beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + hp.eps);
            }
        }
    }
}

/// Scale all gradients by `max_norm / norm` when their global L2 norm
/// exceeds `max_norm`. Returns the norm before clipping.
pub fn clip_gradients(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}
