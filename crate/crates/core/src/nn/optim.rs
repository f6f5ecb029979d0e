//! Adam optimizer with optional decoupled weight decay.
//!
//! State (first and second moment buffers) is keyed by parameter visit
//! order, which the model keeps stable, so a checkpointed optimizer can be
//! rebuilt against the same architecture.

use serde::{Deserialize, Serialize};

use super::tensor::Param;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty strength. Coupled mode adds `weight_decay * w` to the
    /// gradient before the moment updates; decoupled mode shrinks the
    /// weights directly by `lr * weight_decay * w` after the Adam step.
    pub weight_decay: f64,
    pub decoupled_weight_decay: bool,
}

impl Default for AdamConfig {
    fn default() -> AdamConfig {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            decoupled_weight_decay: false,
        }
    }
}

#[derive(Debug, Clone)]
struct Slot {
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    slots: Vec<Slot>,
    t: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Adam {
        Adam { cfg, slots: Vec::new(), t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Apply one update to every parameter the visitor yields. The visitor
    /// must yield parameters in the same order on every call; slots are
    /// created lazily on the first step.
    pub fn step(&mut self, visit: &mut dyn FnMut(&mut dyn FnMut(&mut Param))) {
        self.t += 1;
        let t = self.t as i32;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let mut idx = 0;
        let slots = &mut self.slots;
        visit(&mut |p: &mut Param| {
            if slots.len() == idx {
                slots.push(Slot { m: vec![0.0; p.value.numel()], v: vec![0.0; p.value.numel()] });
            }
            let slot = &mut slots[idx];
            assert_eq!(slot.m.len(), p.value.numel(), "parameter order changed between steps");
            idx += 1;
            let w = p.value.data_mut();
            let g = p.grad.data_mut();
            for i in 0..w.len() {
                let mut gi = g[i];
                if !c.decoupled_weight_decay && c.weight_decay != 0.0 {
                    gi += c.weight_decay * w[i];
                }
                slot.m[i] = c.beta1 * slot.m[i] + (1.0 - c.beta1) * gi;
                slot.v[i] = c.beta2 * slot.v[i] + (1.0 - c.beta2) * gi * gi;
                let m_hat = slot.m[i] / bc1;
                let v_hat = slot.v[i] / bc2;
                let mut delta = c.lr * m_hat / (v_hat.sqrt() + c.eps);
                if c.decoupled_weight_decay && c.weight_decay != 0.0 {
                    delta += c.lr * c.weight_decay * w[i];
                }
                w[i] -= delta;
            }
        });
    }
}
