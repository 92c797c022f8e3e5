//! Adaptive-moment optimizer over named parameter tensors.
//!
//! State (first/second moments and step count) is keyed by parameter name
//! rather than by position, so the caller may apply gradients to any subset
//! of parameters in any order; a parameter's bias correction advances only
//! on the steps that actually touched it.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("adam.lr must be > 0, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("adam.{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::config(format!("adam.eps must be > 0, got {}", self.eps)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Slot {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    slots: BTreeMap<String, Slot>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Adam {
        Adam { cfg, slots: BTreeMap::new() }
    }

    /// Apply one gradient step to `param`, scaling the gradient by
    /// `grad_scale` first (the global-norm clip factor).
    pub fn step(&mut self, name: &str, param: &mut Tensor, grad: &Tensor, grad_scale: f64) -> Result<()> {
        if param.shape() != grad.shape() {
            return Err(Error::config(format!(
                "adam step on {name}: param shape {:?} vs grad shape {:?}",
                param.shape(),
                grad.shape()
            )));
        }
        let n = param.numel();
        let slot = self.slots.entry(name.to_string()).or_insert_with(|| Slot {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        });
        if slot.m.len() != n {
            return Err(Error::config(format!(
                "adam state for {name} has {} entries, parameter has {n}",
                slot.m.len()
            )));
        }
        slot.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - b1.powi(slot.t as i32);
        let bc2 = 1.0 - b2.powi(slot.t as i32);
        let data = param.data_mut();
        let g = grad.data();
        for i in 0..n {
            let gi = g[i] * grad_scale;
            slot.m[i] = b1 * slot.m[i] + (1.0 - b1) * gi;
            slot.v[i] = b2 * slot.v[i] + (1.0 - b2) * gi * gi;
            let m_hat = slot.m[i] / bc1;
            let v_hat = slot.v[i] / bc2;
            data[i] -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
        }
        Ok(())
    }

    /// Number of parameters with optimizer state.
    pub fn tracked(&self) -> usize {
        self.slots.len()
    }
}

/// Global L2 norm over a set of gradient tensors.
pub fn global_norm(grads: &[&Tensor]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

/// Scale factor that caps the global gradient norm at `max_norm`
/// (1.0 when already within the cap).
pub fn clip_scale(norm: f64, max_norm: f64) -> f64 {
    if norm > max_norm {
        max_norm / (norm + 1e-12)
    } else {
        1.0
    }
}
