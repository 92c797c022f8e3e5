//! Clipped-surrogate policy optimization over recurrent actor-critic nets,
//! with the contrastive alignment loss folded into the same objective and
//! optimizer.
//!
//! Each update re-unrolls both recurrences on the gradient tape from the
//! hidden states stored at rollout start, replaying the episode-boundary
//! hidden resets as multiplicative masks, so the recomputed log-probs match
//! the collected ones exactly on the first pass. Minibatches are whole
//! environment sequences — splitting a sequence mid-way would invalidate
//! the stored hiddens.

pub mod adam;
pub mod gae;
pub mod rollout;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::contrastive::info_nce_on_tape;
use crate::error::{Error, Result};
use crate::nets::{
    gaussian_entropy_on_tape, gaussian_log_prob_on_tape, ActorNet, ActorTape, ContrastiveHeads,
    CriticNet, CriticTape, HeadsTape, NetDims,
};
use crate::rng::SeedStream;
use crate::tensor::tape::{NodeId, Tape};
use crate::tensor::Tensor;

use adam::{clip_scale, global_norm, Adam, AdamConfig};
use gae::{gae_advantages, normalize_in_place, GaeConfig};
use rollout::Trajectory;

/// Which positive pairing the contrastive term uses, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastMode {
    /// Align m_t^a with the privileged context of the same timestep.
    SameStep,
    /// Align m_t^a with the privileged context one step ahead.
    Sequential,
    /// No contrastive term (the "w/o contrastive" ablation).
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    /// Surrogate clip width ε.
    pub clip: f64,
    pub gae: GaeConfig,
    pub epochs: usize,
    pub minibatches: usize,
    pub lr: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub contrastive_coef: f64,
    /// InfoNCE temperature.
    pub tau: f64,
    pub max_grad_norm: f64,
    /// Early-stop threshold on mean(logp_old − logp_new).
    pub target_kl: f64,
    /// Rollout length T.
    pub horizon: usize,
    pub num_envs: usize,
    pub contrast: ContrastMode,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip: 0.2,
            gae: GaeConfig::default(),
            epochs: 4,
            minibatches: 4,
            lr: 3e-4,
            value_coef: 0.5,
            entropy_coef: 0.005,
            contrastive_coef: 0.5,
            tau: 0.1,
            max_grad_norm: 1.0,
            target_kl: 0.03,
            horizon: 32,
            num_envs: 64,
            contrast: ContrastMode::SameStep,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(Error::config(format!("ppo.clip must be in (0, 1), got {}", self.clip)));
        }
        self.gae.validate()?;
        if self.epochs == 0 || self.minibatches == 0 {
            return Err(Error::config(format!(
                "ppo needs >= 1 epoch and >= 1 minibatch, got {} and {}",
                self.epochs, self.minibatches
            )));
        }
        if self.num_envs == 0 || self.num_envs % self.minibatches != 0 {
            return Err(Error::config(format!(
                "ppo.num_envs ({}) must be a positive multiple of ppo.minibatches ({}) \
                 so whole sequences divide evenly",
                self.num_envs, self.minibatches
            )));
        }
        let min_horizon = if self.contrast == ContrastMode::Sequential { 2 } else { 1 };
        if self.horizon < min_horizon {
            return Err(Error::config(format!(
                "ppo.horizon must be >= {min_horizon} for this contrast mode, got {}",
                self.horizon
            )));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config(format!("ppo.lr must be > 0, got {}", self.lr)));
        }
        for (name, v) in [
            ("value_coef", self.value_coef),
            ("entropy_coef", self.entropy_coef),
            ("contrastive_coef", self.contrastive_coef),
            ("target_kl", self.target_kl),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("ppo.{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.tau > 0.0) {
            return Err(Error::config(format!("ppo.tau must be > 0, got {}", self.tau)));
        }
        if !(self.max_grad_norm > 0.0) {
            return Err(Error::config(format!(
                "ppo.max_grad_norm must be > 0, got {}",
                self.max_grad_norm
            )));
        }
        Ok(())
    }
}

/// Eq. 8 term for a single sample; the taped objective applies this
/// elementwise before the mean. Kept as a plain function so tests and the
/// acceptance suite can pin its arithmetic directly.
pub fn clipped_objective(ratio: f64, advantage: f64, clip: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
    (ratio * advantage).min(clipped * advantage)
}

/// Aggregate diagnostics over one update's applied minibatches.
///
/// Loss components are means over minibatches that were actually applied
/// (zero if none were); `approx_kl` is the last estimate computed,
/// including one that triggered the early stop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub surrogate: f64,
    pub value_loss: f64,
    pub contrastive: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    /// Fraction of samples with |ratio − 1| > ε.
    pub clip_fraction: f64,
    /// Mean pre-clip global gradient norm.
    pub grad_norm: f64,
    pub minibatches_applied: u32,
    pub early_stopped: bool,
    /// Non-finite loss or gradients were detected; parameters were rolled
    /// back to their pre-update values (optimizer moments are not).
    pub faulted: bool,
    /// max |ratio − 1| on the first pass, before any parameter change.
    pub first_ratio_dev: f64,
}

impl UpdateStats {
    fn zeroed() -> UpdateStats {
        UpdateStats {
            surrogate: 0.0,
            value_loss: 0.0,
            contrastive: 0.0,
            entropy: 0.0,
            approx_kl: 0.0,
            clip_fraction: 0.0,
            grad_norm: 0.0,
            minibatches_applied: 0,
            early_stopped: false,
            faulted: false,
            first_ratio_dev: 0.0,
        }
    }
}

/// Everything one gradient pass produces: diagnostics plus gradients in
/// canonical parameter order (actor, log_std, critic, heads).
struct PassResult {
    grads: Vec<Option<Tensor>>,
    grad_norm: f64,
    finite: bool,
    kl: f64,
    surrogate: f64,
    value_loss: f64,
    contrastive: f64,
    entropy: f64,
    clip_fraction: f64,
    max_ratio_dev: f64,
}

/// Policy, value, and contrastive networks with their shared optimizer.
pub struct Learner {
    pub actor: ActorNet,
    pub critic: CriticNet,
    pub heads: ContrastiveHeads,
    pub opt: Adam,
    pub cfg: PpoConfig,
    pub dims: NetDims,
    pub updates: u64,
    shuffle_rng: ChaCha8Rng,
}

impl Learner {
    pub fn new(dims: NetDims, cfg: PpoConfig, master_seed: u64) -> Result<Learner> {
        cfg.validate()?;
        let mut rng = SeedStream::new(master_seed).with_str("net-init").rng();
        let actor = ActorNet::init(dims, &mut rng)?;
        let critic = CriticNet::init(dims, &mut rng)?;
        let heads = ContrastiveHeads::init(dims, &mut rng)?;
        Ok(Learner {
            actor,
            critic,
            heads,
            opt: Adam::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() }),
            cfg,
            dims,
            updates: 0,
            shuffle_rng: SeedStream::new(master_seed).with_str("minibatch-shuffle").rng(),
        })
    }

    /// One PPO update over a collected trajectory batch.
    pub fn update(&mut self, traj: &Trajectory) -> Result<UpdateStats> {
        self.check_batch(traj)?;
        let snapshot =
            Checkpoint::capture(&self.actor, &self.critic, &self.heads, self.updates, serde_json::Value::Null);

        // Advantages for every sequence, before any shuffling.
        let (t_len, n) = (traj.horizon, traj.num_envs);
        let mut advantages = vec![vec![0.0; n]; t_len];
        let mut returns = vec![vec![0.0; n]; t_len];
        for e in 0..n {
            let rewards: Vec<f64> = (0..t_len).map(|t| traj.rewards[t][e]).collect();
            let values: Vec<f64> = (0..t_len).map(|t| traj.values[t][e]).collect();
            let dones: Vec<bool> = (0..t_len).map(|t| traj.dones[t][e]).collect();
            let (adv, ret) =
                gae_advantages(&rewards, &values, &dones, traj.bootstrap[e], self.cfg.gae)?;
            for t in 0..t_len {
                advantages[t][e] = adv[t];
                returns[t][e] = ret[t];
            }
        }

        let mut stats = UpdateStats::zeroed();
        let group = n / self.cfg.minibatches;
        let mut order: Vec<usize> = (0..n).collect();
        let mut first_pass = true;
        'epochs: for _epoch in 0..self.cfg.epochs {
            order.shuffle(&mut self.shuffle_rng);
            for mb in 0..self.cfg.minibatches {
                let rows = &order[mb * group..(mb + 1) * group];
                let pass = self.minibatch_pass(traj, &advantages, &returns, rows)?;
                if first_pass {
                    stats.first_ratio_dev = pass.max_ratio_dev;
                    first_pass = false;
                }
                stats.approx_kl = pass.kl;
                if !pass.finite {
                    snapshot.restore(&mut self.actor, &mut self.critic, &mut self.heads)?;
                    stats.faulted = true;
                    break 'epochs;
                }
                if pass.kl > self.cfg.target_kl {
                    stats.early_stopped = true;
                    break 'epochs;
                }
                let scale = clip_scale(pass.grad_norm, self.cfg.max_grad_norm);
                self.apply(&pass.grads, scale)?;
                stats.surrogate += pass.surrogate;
                stats.value_loss += pass.value_loss;
                stats.contrastive += pass.contrastive;
                stats.entropy += pass.entropy;
                stats.clip_fraction += pass.clip_fraction;
                stats.grad_norm += pass.grad_norm;
                stats.minibatches_applied += 1;
            }
        }
        if stats.minibatches_applied > 0 {
            let k = stats.minibatches_applied as f64;
            stats.surrogate /= k;
            stats.value_loss /= k;
            stats.contrastive /= k;
            stats.entropy /= k;
            stats.clip_fraction /= k;
            stats.grad_norm /= k;
        }
        self.updates += 1;
        Ok(stats)
    }

    fn check_batch(&self, traj: &Trajectory) -> Result<()> {
        let (t_len, n) = (traj.horizon, traj.num_envs);
        if n == 0 || n % self.cfg.minibatches != 0 {
            return Err(Error::config(format!(
                "trajectory has {n} sequences, not divisible into {} minibatches",
                self.cfg.minibatches
            )));
        }
        let min_horizon = if self.cfg.contrast == ContrastMode::Sequential { 2 } else { 1 };
        if t_len < min_horizon {
            return Err(Error::config(format!(
                "trajectory horizon {t_len} too short for this contrast mode"
            )));
        }
        for (name, len) in [
            ("obs", traj.obs.len()),
            ("privileged", traj.privileged.len()),
            ("maps", traj.maps.len()),
            ("actions", traj.actions.len()),
            ("logp", traj.logp.len()),
            ("values", traj.values.len()),
            ("rewards", traj.rewards.len()),
            ("dones", traj.dones.len()),
        ] {
            if len != t_len {
                return Err(Error::config(format!(
                    "trajectory field {name} has {len} steps, expected {t_len}"
                )));
            }
        }
        if traj.bootstrap.len() != n {
            return Err(Error::config(format!(
                "trajectory bootstrap has {} entries, expected {n}",
                traj.bootstrap.len()
            )));
        }
        Ok(())
    }

    /// Build the taped loss for one minibatch of whole sequences and run
    /// backward. No parameters are modified here.
    fn minibatch_pass(
        &self,
        traj: &Trajectory,
        advantages: &[Vec<f64>],
        returns: &[Vec<f64>],
        rows: &[usize],
    ) -> Result<PassResult> {
        let b = rows.len();
        let t_len = traj.horizon;
        let cfg = &self.cfg;
        let mut tape = Tape::new();
        let at = ActorTape::register(&mut tape, &self.actor);
        let ct = CriticTape::register(&mut tape, &self.critic);
        let ht = HeadsTape::register(&mut tape, &self.heads);

        let mut h_a = {
            let t = select_rows(&traj.actor_h0, rows)?;
            tape.constant(t)
        };
        let mut h_c = {
            let t = select_rows(&traj.critic_h0, rows)?;
            tape.constant(t)
        };

        let mut logp_nodes = Vec::with_capacity(t_len);
        let mut value_nodes = Vec::with_capacity(t_len);
        let mut source_nodes = Vec::with_capacity(t_len);
        let mut target_nodes = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let obs = {
                let v = select_rows(&traj.obs[t], rows)?;
                tape.constant(v)
            };
            let (mean, m_a) = at.step(&mut tape, obs, h_a)?;
            let act = {
                let v = select_rows(&traj.actions[t], rows)?;
                tape.constant(v)
            };
            logp_nodes.push(gaussian_log_prob_on_tape(&mut tape, mean, at.log_std, act)?);

            let privileged = {
                let v = select_rows(&traj.privileged[t], rows)?;
                tape.constant(v)
            };
            let map = {
                let v = select_map_rows(&traj.maps[t], rows)?;
                tape.constant(v)
            };
            let (value, m_c, u) = ct.step(&mut tape, privileged, map, h_c)?;
            value_nodes.push(value);

            if cfg.contrast != ContrastMode::Off {
                source_nodes.push(ht.source(&mut tape, m_a)?);
                target_nodes.push(ht.target(&mut tape, u, privileged)?);
            }

            // Replay the collector's episode-boundary hidden resets.
            let mask = {
                let v = Tensor::from_rows(b, 1, |i| {
                    vec![if traj.dones[t][rows[i]] { 0.0 } else { 1.0 }]
                })?;
                tape.constant(v)
            };
            h_a = tape.mul_col(m_a, mask)?;
            h_c = tape.mul_col(m_c, mask)?;
        }

        let logp_new = tape.concat_rows(&logp_nodes)?;
        let values = tape.concat_rows(&value_nodes)?;
        let sample_count = t_len * b;

        let logp_old_flat = stack_steps(&traj.logp, rows);
        let mut adv_flat: Vec<f64> = Vec::with_capacity(sample_count);
        let mut ret_flat: Vec<f64> = Vec::with_capacity(sample_count);
        for t in 0..t_len {
            for &r in rows {
                adv_flat.push(advantages[t][r]);
                ret_flat.push(returns[t][r]);
            }
        }
        normalize_in_place(&mut adv_flat);

        let logp_old = {
            let v = Tensor::from_vec(&[sample_count, 1], logp_old_flat.clone())?;
            tape.constant(v)
        };
        let adv = {
            let v = Tensor::from_vec(&[sample_count, 1], adv_flat)?;
            tape.constant(v)
        };
        let ret = {
            let v = Tensor::from_vec(&[sample_count, 1], ret_flat)?;
            tape.constant(v)
        };

        // Clipped surrogate (maximized; the loss negates it).
        let diff = tape.sub(logp_new, logp_old)?;
        let ratio = tape.exp(diff)?;
        let clipped = tape.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip)?;
        let r_adv = tape.mul(ratio, adv)?;
        let c_adv = tape.mul(clipped, adv)?;
        let surr_terms = tape.minimum(r_adv, c_adv)?;
        let surrogate = tape.mean(surr_terms)?;

        let v_err = tape.sub(values, ret)?;
        let v_sq = tape.mul(v_err, v_err)?;
        let value_loss = tape.mean(v_sq)?;

        let entropy = gaussian_entropy_on_tape(&mut tape, at.log_std)?;

        let contrastive = match cfg.contrast {
            ContrastMode::SameStep => {
                let s = tape.concat_rows(&source_nodes)?;
                let t2 = tape.concat_rows(&target_nodes)?;
                Some(info_nce_on_tape(&mut tape, s, t2, cfg.tau)?)
            }
            ContrastMode::Sequential => {
                let s = tape.concat_rows(&source_nodes[..t_len - 1])?;
                let t2 = tape.concat_rows(&target_nodes[1..])?;
                Some(info_nce_on_tape(&mut tape, s, t2, cfg.tau)?)
            }
            ContrastMode::Off => None,
        };

        let mut loss = tape.scale(surrogate, -1.0)?;
        let v_term = tape.scale(value_loss, cfg.value_coef)?;
        loss = tape.add(loss, v_term)?;
        if let Some(c) = contrastive {
            let c_term = tape.scale(c, cfg.contrastive_coef)?;
            loss = tape.add(loss, c_term)?;
        }
        let e_term = tape.scale(entropy, -cfg.entropy_coef)?;
        loss = tape.add(loss, e_term)?;

        // Diagnostics read eagerly off the tape.
        let logp_new_data = tape.value(logp_new).data();
        let kl = logp_old_flat
            .iter()
            .zip(logp_new_data)
            .map(|(old, new)| old - new)
            .sum::<f64>()
            / sample_count as f64;
        let ratio_data = tape.value(ratio).data();
        let clip_fraction = ratio_data
            .iter()
            .filter(|r| (*r - 1.0).abs() > cfg.clip)
            .count() as f64
            / sample_count as f64;
        let max_ratio_dev = ratio_data.iter().map(|r| (r - 1.0).abs()).fold(0.0, f64::max);
        let loss_value = tape.value(loss).item()?;
        let surrogate_value = tape.value(surrogate).item()?;
        let value_loss_value = tape.value(value_loss).item()?;
        let entropy_value = tape.value(entropy).item()?;
        let contrastive_value = match contrastive {
            Some(c) => tape.value(c).item()?,
            None => 0.0,
        };

        let grads = tape.backward(loss)?;
        let nodes = self.param_node_order(&at, &ct, &ht);
        let grad_tensors: Vec<Option<Tensor>> =
            nodes.iter().map(|id| grads.get(*id).cloned()).collect();
        let present: Vec<&Tensor> = grad_tensors.iter().flatten().collect();
        let grad_norm = global_norm(&present);
        let finite = loss_value.is_finite()
            && grad_norm.is_finite()
            && present.iter().all(|g| g.data().iter().all(|v| v.is_finite()));

        Ok(PassResult {
            grads: grad_tensors,
            grad_norm,
            finite,
            kl,
            surrogate: surrogate_value,
            value_loss: value_loss_value,
            contrastive: contrastive_value,
            entropy: entropy_value,
            clip_fraction,
            max_ratio_dev,
        })
    }

    /// Tape nodes in the exact order `apply` walks the parameters.
    fn param_node_order(&self, at: &ActorTape, ct: &CriticTape, ht: &HeadsTape) -> Vec<NodeId> {
        let mut nodes = Vec::new();
        // ActorTape lists log_std last; the walk visits it after the actor's
        // named tensors, which is the same position.
        nodes.extend(at.param_nodes());
        nodes.extend(ct.param_nodes());
        nodes.extend(ht.param_nodes());
        nodes
    }

    /// Apply one optimizer step per parameter, zipping the canonical walk
    /// order against the gradient list from `minibatch_pass`.
    fn apply(&mut self, grads: &[Option<Tensor>], grad_scale: f64) -> Result<()> {
        let opt = &mut self.opt;
        let mut idx = 0usize;
        let mut first_err: Option<Error> = None;
        {
            let mut step = |name: &str, t: &mut Tensor| {
                if first_err.is_some() {
                    return;
                }
                match grads.get(idx) {
                    Some(Some(g)) => {
                        if let Err(e) = opt.step(name, t, g, grad_scale) {
                            first_err = Some(e);
                        }
                    }
                    Some(None) => {}
                    None => {
                        first_err = Some(Error::config(
                            "gradient list shorter than the parameter walk",
                        ));
                    }
                }
                idx += 1;
            };
            self.actor.visit_mut(&mut |n, t| step(&format!("actor/{n}"), t));
            step("actor/log_std", &mut self.actor.log_std);
            self.critic.visit_mut(&mut |n, t| step(&format!("critic/{n}"), t));
            self.heads.visit_mut(&mut |n, t| step(&format!("heads/{n}"), t));
        }
        if let Some(e) = first_err {
            return Err(e);
        }
        if idx != grads.len() {
            return Err(Error::config(format!(
                "parameter walk visited {idx} tensors, gradient list has {}",
                grads.len()
            )));
        }
        Ok(())
    }
}

/// Rows `rows` of a rank-2 tensor, in order, as a new tensor.
fn select_rows(t: &Tensor, rows: &[usize]) -> Result<Tensor> {
    let cols = t.cols();
    Tensor::from_rows(rows.len(), cols, |i| t.row(rows[i]).to_vec())
}

/// Batch entries `rows` of a rank-4 [N, C, H, W] tensor.
fn select_map_rows(t: &Tensor, rows: &[usize]) -> Result<Tensor> {
    let shape = t.shape();
    if shape.len() != 4 {
        return Err(Error::config(format!("expected a rank-4 map batch, got {shape:?}")));
    }
    let stride: usize = shape[1..].iter().product();
    let mut data = Vec::with_capacity(rows.len() * stride);
    for &r in rows {
        data.extend_from_slice(&t.data()[r * stride..(r + 1) * stride]);
    }
    Tensor::from_vec(&[rows.len(), shape[1], shape[2], shape[3]], data)
}

/// Flatten per-step scalar vectors to the same (t-major, then row) order
/// the taped `concat_rows` stacking produces.
fn stack_steps(per_step: &[Vec<f64>], rows: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(per_step.len() * rows.len());
    for step in per_step {
        for &r in rows {
            out.push(step[r]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::env::EnvConfig;
    use crate::terrain::TerrainClass;
    use approx::assert_relative_eq;
    use rollout::{dims_for, Collector, VecEnv};

    fn small_cfg() -> PpoConfig {
        PpoConfig {
            epochs: 2,
            minibatches: 2,
            num_envs: 4,
            horizon: 8,
            ..PpoConfig::default()
        }
    }

    /// A real trajectory from real environments with episode boundaries in
    /// the middle (episodes last 6 steps, the horizon is 8).
    fn collected(seed: u64, cfg: &PpoConfig) -> (Learner, Trajectory) {
        let mut env_cfg = EnvConfig::default();
        env_cfg.command.fixed = Some(0.3);
        env_cfg.episode_seconds = 0.12;
        let dims = dims_for(&env_cfg);
        let learner = Learner::new(dims, cfg.clone(), seed).unwrap();
        let mut venv = VecEnv::new(&env_cfg, &TerrainClass::ALL, cfg.num_envs, seed + 100).unwrap();
        let mut col = Collector::new(&mut venv, dims, seed + 200).unwrap();
        // Second rollout: nonzero starting hiddens plus mid-rollout dones.
        let _ = col
            .collect(&mut venv, &learner.actor, &learner.critic, cfg.horizon)
            .unwrap();
        let traj = col
            .collect(&mut venv, &learner.actor, &learner.critic, cfg.horizon)
            .unwrap();
        assert!(
            traj.dones.iter().flatten().any(|d| *d),
            "fixture should contain mid-rollout episode ends"
        );
        learner.cfg.validate().unwrap();
        (learner, traj)
    }

    fn flat_params(l: &Learner) -> Vec<f64> {
        let mut out = Vec::new();
        l.actor.visit(&mut |_, t| out.extend_from_slice(t.data()));
        out.extend_from_slice(l.actor.log_std.data());
        l.critic.visit(&mut |_, t| out.extend_from_slice(t.data()));
        l.heads.visit(&mut |_, t| out.extend_from_slice(t.data()));
        out
    }

    #[test]
    fn clipped_objective_pins_the_reference_cases() {
        assert_relative_eq!(clipped_objective(1.5, 1.0, 0.2), 1.2, epsilon = 1e-15);
        assert_relative_eq!(clipped_objective(1.5, -1.0, 0.2), -1.5, epsilon = 1e-15);
        // r = 1 is the on-policy identity.
        assert_relative_eq!(clipped_objective(1.0, 0.7, 0.2), 0.7, epsilon = 1e-15);
        // Pessimism bound from the module invariants.
        let mut rng = SeedStream::new(3).with_str("clip-prop").rng();
        use rand::Rng;
        for _ in 0..1000 {
            let r = rng.gen_range(0.0..3.0);
            let a = rng.gen_range(-2.0..2.0);
            let s = clipped_objective(r, a, 0.2);
            assert!(s <= r * a + 1e-12);
            if a < 0.0 && r < 0.8 {
                assert!(s <= 0.8 * a + 1e-12);
            }
        }
    }

    #[test]
    fn first_pass_ratios_equal_one_on_real_rollouts() {
        let (mut learner, traj) = collected(42, &small_cfg());
        let stats = learner.update(&traj).unwrap();
        assert!(
            stats.first_ratio_dev < 1e-10,
            "taped re-unroll must reproduce collected log-probs, got dev {}",
            stats.first_ratio_dev
        );
        assert!(!stats.faulted);
        assert!(stats.minibatches_applied >= 1);
        assert!(stats.contrastive > 0.0, "contrastive term should be live");
        assert!(stats.entropy.is_finite() && stats.grad_norm > 0.0);
    }

    #[test]
    fn updates_are_deterministic_for_a_fixed_seed() {
        let cfg = small_cfg();
        let run = || {
            let (mut learner, traj) = collected(7, &cfg);
            learner.update(&traj).unwrap();
            flat_params(&learner)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_advantages_move_only_the_exploration_scale() {
        let cfg = PpoConfig {
            epochs: 1,
            minibatches: 1,
            num_envs: 4,
            horizon: 8,
            contrast: ContrastMode::Off,
            ..PpoConfig::default()
        };
        let (mut learner, mut traj) = collected(11, &cfg);
        // Craft rewards so every TD error is exactly zero against the
        // stored values: advantages vanish and returns equal those values.
        let gamma = cfg.gae.gamma;
        for t in 0..traj.horizon {
            for e in 0..traj.num_envs {
                let v_next = if traj.dones[t][e] {
                    0.0
                } else if t + 1 == traj.horizon {
                    traj.bootstrap[e]
                } else {
                    traj.values[t + 1][e]
                };
                traj.rewards[t][e] = traj.values[t][e] - gamma * v_next;
            }
        }
        let before_log_std = learner.actor.log_std.data().to_vec();
        let mut before_actor = Vec::new();
        learner.actor.visit(&mut |_, t| before_actor.extend_from_slice(t.data()));
        let mut before_critic = Vec::new();
        learner.critic.visit(&mut |_, t| before_critic.extend_from_slice(t.data()));

        let stats = learner.update(&traj).unwrap();

        // With zero advantages the surrogate gradient is exactly zero, and
        // with returns equal to the re-unrolled predictions the value
        // gradient is exactly zero, so only the entropy term acts — it
        // touches nothing but log_std.
        let mut after_actor = Vec::new();
        learner.actor.visit(&mut |_, t| after_actor.extend_from_slice(t.data()));
        let mut after_critic = Vec::new();
        learner.critic.visit(&mut |_, t| after_critic.extend_from_slice(t.data()));
        assert_eq!(before_actor, after_actor, "actor body must not move");
        assert_eq!(before_critic, after_critic, "critic must not move");
        assert_ne!(before_log_std, learner.actor.log_std.data().to_vec());
        assert!(stats.approx_kl.abs() < 1e-12, "kl on unchanged params, got {}", stats.approx_kl);
        assert!(stats.first_ratio_dev < 1e-10);
        assert_relative_eq!(stats.surrogate, 0.0, epsilon = 1e-12);
        assert!(stats.value_loss.abs() < 1e-20);
    }

    #[test]
    fn non_finite_input_rolls_parameters_back() {
        let (mut learner, mut traj) = collected(13, &small_cfg());
        let before = flat_params(&learner);
        traj.logp[0][0] = f64::NAN;
        let stats = learner.update(&traj).unwrap();
        assert!(stats.faulted);
        assert_eq!(before, flat_params(&learner), "fault must restore parameters bitwise");
    }

    #[test]
    fn a_tight_kl_budget_stops_the_update_early() {
        let cfg = PpoConfig {
            epochs: 2,
            minibatches: 4,
            num_envs: 8,
            horizon: 8,
            target_kl: 1e-9,
            lr: 3e-3,
            ..PpoConfig::default()
        };
        let (mut learner, traj) = collected(17, &cfg);
        let stats = learner.update(&traj).unwrap();
        assert!(stats.early_stopped);
        assert!(stats.minibatches_applied < 8);
        // The stop fires before applying the offending minibatch: the first
        // pass (ratios = 1, kl ≈ 0) applies, later ones trip the budget.
        assert!(stats.minibatches_applied >= 1);
        assert!(stats.approx_kl > 1e-9);
    }

    #[test]
    fn sequential_contrast_pairs_sources_with_later_targets() {
        let cfg = PpoConfig {
            contrast: ContrastMode::Sequential,
            ..small_cfg()
        };
        let (mut learner, traj) = collected(19, &cfg);
        let stats = learner.update(&traj).unwrap();
        assert!(!stats.faulted);
        assert!(stats.contrastive > 0.0);
        // ln of the pair count bounds the InfoNCE loss from above.
        let pairs = ((traj.horizon - 1) * traj.num_envs / cfg.minibatches) as f64;
        assert!(stats.contrastive <= pairs.ln() + 1e-9);
    }

    #[test]
    fn contrast_off_leaves_the_heads_untouched() {
        let cfg = PpoConfig { contrast: ContrastMode::Off, ..small_cfg() };
        let (mut learner, traj) = collected(23, &cfg);
        let mut before = Vec::new();
        learner.heads.visit(&mut |_, t| before.extend_from_slice(t.data()));
        let stats = learner.update(&traj).unwrap();
        let mut after = Vec::new();
        learner.heads.visit(&mut |_, t| after.extend_from_slice(t.data()));
        assert_eq!(before, after);
        assert_eq!(stats.contrastive, 0.0);
    }

    #[test]
    fn config_validation_rejects_inconsistent_settings() {
        let mut cfg = PpoConfig::default();
        cfg.clip = 0.0;
        assert!(cfg.validate().is_err());
        cfg = PpoConfig { num_envs: 5, minibatches: 4, ..PpoConfig::default() };
        assert!(cfg.validate().is_err());
        cfg = PpoConfig { contrast: ContrastMode::Sequential, horizon: 1, ..PpoConfig::default() };
        assert!(cfg.validate().is_err());
        assert!(PpoConfig::default().validate().is_ok());
    }
}
