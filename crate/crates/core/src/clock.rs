//! Adaptive gait clock.
//!
//! A global phase accumulator drives one sinusoid per foot; the policy's
//! last three action entries (δ₀, δ₁, δ₂) modulate the clock every control
//! step. δ₀ speeds or slows the phase advance, δ₁/δ₂ shift each foot's
//! sinusoid. Thresholding the sinusoids produces the stance/swing mask the
//! contact-pattern reward compares against actual foot contacts:
//!
//! ```text
//! phi    += (1 + alpha * δ₀) * dt          (phase, seconds; strictly increasing)
//! varphi  = (phi / T_cycle) mod 1          (normalized phase, cycles)
//! s       = sin(2π (varphi + δ₁))          (left foot)
//! c       = sin(2π (varphi + δ₂ + psi))    (right foot)
//! stance  = (s ≥ gamma, c ≥ gamma)
//! ```
//!
//! Raw δ outputs are scaled by `beta_scale` and clamped to fixed bounds
//! before use; the δ₀ bound keeps `1 + alpha·δ₀` positive so phase never
//! stalls or reverses. With all deltas forced to zero the clock degrades to
//! a fixed open-loop cycle (the fixed-cycle ablation).

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ClockConfig {
    /// Seconds of wall time per control step.
    pub dt: f64,
    /// Reference gait period in seconds (one full cycle at δ₀ = 0).
    pub t_cycle: f64,
    /// Frequency-modulation gain on δ₀.
    pub alpha: f64,
    /// Scale applied to the raw δ action entries before clamping.
    pub beta_scale: f64,
    /// Inter-leg phase offset in cycles; 0.5 puts the feet in antiphase.
    pub psi: f64,
    /// Stance threshold on the sinusoid value, in [-1, 1).
    pub gamma: f64,
    /// Post-scale clamp bound for δ₀ (symmetric).
    pub delta0_limit: f64,
    /// Post-scale clamp bound for δ₁ and δ₂ (symmetric).
    pub delta12_limit: f64,
}

impl Default for ClockConfig {
    fn default() -> Self {
        ClockConfig {
            dt: 0.02,
            t_cycle: 0.8,
            alpha: 0.5,
            beta_scale: 0.5,
            psi: 0.5,
            gamma: -0.05,
            delta0_limit: 0.4,
            delta12_limit: 0.25,
        }
    }
}

impl ClockConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::config(format!("clock.dt must be > 0, got {}", self.dt)));
        }
        if !(self.t_cycle > 0.0) {
            return Err(Error::config(format!(
                "clock.t_cycle must be > 0, got {}",
                self.t_cycle
            )));
        }
        if !(-1.0..1.0).contains(&self.gamma) {
            return Err(Error::config(format!(
                "clock.gamma must be in [-1, 1), got {}",
                self.gamma
            )));
        }
        if !(self.delta0_limit >= 0.0 && self.delta12_limit >= 0.0) {
            return Err(Error::config("clock delta limits must be >= 0".to_string()));
        }
        // Phase must stay strictly increasing for every reachable δ₀.
        if self.alpha.abs() * self.delta0_limit >= 1.0 {
            return Err(Error::config(format!(
                "clock: |alpha|*delta0_limit = {} >= 1 lets the phase stall",
                self.alpha.abs() * self.delta0_limit
            )));
        }
        if !(self.dt.is_finite()
            && self.t_cycle.is_finite()
            && self.alpha.is_finite()
            && self.beta_scale.is_finite()
            && self.psi.is_finite())
        {
            return Err(Error::config("clock config has non-finite fields".to_string()));
        }
        Ok(())
    }
}

/// Snapshot of the clock after one control step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseState {
    /// Accumulated phase, seconds. Non-decreasing.
    pub phi: f64,
    /// Normalized phase in cycles, wrapped to [0, 1).
    pub varphi: f64,
    /// δ values actually applied this step (after scaling and clamping).
    pub deltas: [f64; 3],
    /// Left-foot sinusoid value.
    pub s: f64,
    /// Right-foot sinusoid value.
    pub c: f64,
    /// (left, right) stance indicators.
    pub stance: [bool; 2],
}

impl PhaseState {
    /// Clock at phase zero with no modulation applied.
    pub fn init(cfg: &ClockConfig) -> PhaseState {
        let varphi = 0.0;
        let (s, c) = sinusoids(varphi, 0.0, 0.0, cfg.psi);
        PhaseState {
            phi: 0.0,
            varphi,
            deltas: [0.0; 3],
            s,
            c,
            stance: stance_mask(s, c, cfg.gamma),
        }
    }

    /// Gait-phase observation: continuous encoding of the normalized phase.
    pub fn phase_features(&self) -> [f64; 2] {
        [(TAU * self.varphi).sin(), (TAU * self.varphi).cos()]
    }
}

/// Per-foot sinusoids at a normalized phase, with per-foot shifts (cycles).
pub fn sinusoids(varphi: f64, delta1: f64, delta2: f64, psi: f64) -> (f64, f64) {
    let s = (TAU * (varphi + delta1)).sin();
    let c = (TAU * (varphi + delta2 + psi)).sin();
    (s, c)
}

/// Stance indicators: a foot is commanded into stance while its sinusoid
/// sits at or above the threshold. Left is driven by `s`, right by `c`.
pub fn stance_mask(s: f64, c: f64, gamma: f64) -> [bool; 2] {
    [s >= gamma, c >= gamma]
}

/// Advance the clock one control step. `raw_deltas` are the last three
/// action entries, before beta scaling and clamping.
pub fn advance(state: &PhaseState, raw_deltas: [f64; 3], cfg: &ClockConfig) -> Result<PhaseState> {
    if raw_deltas.iter().any(|d| !d.is_finite()) {
        return Err(Error::numeric(format!(
            "clock advance: non-finite deltas {:?}",
            raw_deltas
        )));
    }
    let d0 = (cfg.beta_scale * raw_deltas[0]).clamp(-cfg.delta0_limit, cfg.delta0_limit);
    let d1 = (cfg.beta_scale * raw_deltas[1]).clamp(-cfg.delta12_limit, cfg.delta12_limit);
    let d2 = (cfg.beta_scale * raw_deltas[2]).clamp(-cfg.delta12_limit, cfg.delta12_limit);

    let phi = state.phi + (1.0 + cfg.alpha * d0) * cfg.dt;
    let varphi = (phi / cfg.t_cycle).rem_euclid(1.0);
    let (s, c) = sinusoids(varphi, d1, d2, cfg.psi);
    Ok(PhaseState {
        phi,
        varphi,
        deltas: [d0, d1, d2],
        s,
        c,
        stance: stance_mask(s, c, cfg.gamma),
    })
}
