//! AdamW with decoupled weight decay.

use crate::numeric::{Gradients, ParamTable};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Optimizer state lives beside the parameters, keyed by the same ids.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    m: Gradients,
    v: Gradients,
    t: u64,
}

impl AdamW {
    pub fn new(params: &ParamTable, lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            weight_decay,
            m: params.zero_gradients(),
            v: params.zero_gradients(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update. Decay shrinks only parameters flagged for
    /// it (weights and embeddings).
    pub fn step(&mut self, params: &mut ParamTable, grads: &Gradients) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t as i32);
        let c2 = 1.0 - BETA2.powi(self.t as i32);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let decay = if params.decays(id) { self.lr * self.weight_decay } else { 0.0 };
            let g = grads.get(id).data();
            let m = self.m.get_mut(id).data_mut();
            let v = self.v.get_mut(id).data_mut();
            let p = params.get_mut(id).data_mut();
            for k in 0..p.len() {
                m[k] = BETA1 * m[k] + (1.0 - BETA1) * g[k];
                v[k] = BETA2 * v[k] + (1.0 - BETA2) * g[k] * g[k];
                let step = (m[k] / c1) / ((v[k] / c2).sqrt() + EPS);
                p[k] -= decay * p[k] + self.lr * step;
            }
        }
    }
}
