//! Generalized advantage estimation over one environment's reward sequence.
//!
//! Episode boundaries are hard cuts: a `done` at step t zeroes both the
//! bootstrap into t and the advantage recursion across t, so value targets
//! never leak between episodes. Timeouts count as terminal here — the
//! environment treats a time-limit stop as the end of the decision problem,
//! so no bootstrap value is carried across it either.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Discount and smoothing parameters for the advantage recursion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaeConfig {
    /// Reward discount γ_d ∈ (0, 1].
    pub gamma: f64,
    /// Exponential blend λ ∈ [0, 1] over n-step advantage estimates.
    pub lam: f64,
}

impl Default for GaeConfig {
    fn default() -> Self {
        GaeConfig { gamma: 0.99, lam: 0.95 }
    }
}

impl GaeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config(format!(
                "gae.gamma must be in (0, 1], got {}",
                self.gamma
            )));
        }
        if !(0.0..=1.0).contains(&self.lam) {
            return Err(Error::config(format!(
                "gae.lam must be in [0, 1], got {}",
                self.lam
            )));
        }
        Ok(())
    }
}

/// Advantages and returns for one sequence.
///
/// `values[t]` is V(s_t) under the collecting policy, `v_last` is the
/// bootstrap V(s_T) for the state after the final step (ignored when
/// `dones[T-1]` is set). Returns `(advantages, returns)` with
/// `returns[t] = advantages[t] + values[t]`.
pub fn gae_advantages(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    v_last: f64,
    cfg: GaeConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    cfg.validate()?;
    let t_len = rewards.len();
    if values.len() != t_len || dones.len() != t_len {
        return Err(Error::config(format!(
            "gae length mismatch: rewards {}, values {}, dones {}",
            t_len,
            values.len(),
            dones.len()
        )));
    }
    let mut advantages = vec![0.0; t_len];
    let mut returns = vec![0.0; t_len];
    let mut carry = 0.0;
    for t in (0..t_len).rev() {
        let mask = if dones[t] { 0.0 } else { 1.0 };
        let v_next = if t + 1 == t_len { v_last } else { values[t + 1] };
        let delta = rewards[t] + cfg.gamma * v_next * mask - values[t];
        carry = delta + cfg.gamma * cfg.lam * mask * carry;
        advantages[t] = carry;
        returns[t] = carry + values[t];
    }
    Ok((advantages, returns))
}

/// Shift a slice to zero mean and unit variance (ε-guarded denominator).
/// PPO applies this per minibatch before the surrogate.
pub fn normalize_in_place(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let denom = var.sqrt() + 1e-8;
    for x in xs.iter_mut() {
        *x = (*x - mean) / denom;
    }
}
