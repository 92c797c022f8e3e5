//! Batched experience collection across a set of persistent environments.
//!
//! Environments run continuously: an episode that ends mid-rollout is
//! recorded against its curriculum, the environment resets in place, and the
//! recurrent hidden state for that row is zeroed so the next episode starts
//! from a blank memory. The update phase re-unrolls the recurrences from the
//! stored rollout-start hiddens, replaying those same zero-masks, so the
//! collected log-probs are reproducible on the tape.

use std::collections::VecDeque;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nets::{sample_action, ActorNet, CriticNet, NetDims};
use crate::rng::SeedStream;
use crate::sim::dynamics::N_JOINTS;
use crate::sim::env::{BipedEnv, Curriculum, EnvConfig, EnvStep};
use crate::tensor::Tensor;
use crate::terrain::TerrainClass;

/// Rolling window length for the aggregate success-rate metric.
const SUCCESS_WINDOW: usize = 100;

/// Network dimensions implied by an environment configuration.
pub fn dims_for(cfg: &EnvConfig) -> NetDims {
    NetDims {
        obs: cfg.obs_width(),
        privileged: cfg.privileged_width(),
        action: cfg.action_width(),
        joints: N_JOINTS,
        map_rows: cfg.terrain.global_patch_rows,
        map_cols: cfg.terrain.global_patch_cols,
        ..NetDims::default()
    }
}

/// A fixed set of environments with per-environment terrain curricula.
pub struct VecEnv {
    pub envs: Vec<BipedEnv>,
    curricula: Vec<Curriculum>,
    recent: VecDeque<bool>,
    episodes_finished: u64,
}

impl VecEnv {
    /// Environment `i` is assigned `classes[i % classes.len()]` at level 0
    /// and seeded from `(master_seed, i)`.
    pub fn new(
        cfg: &EnvConfig,
        classes: &[TerrainClass],
        num_envs: usize,
        master_seed: u64,
    ) -> Result<VecEnv> {
        if num_envs == 0 || classes.is_empty() {
            return Err(Error::config(format!(
                "vec env needs >= 1 environment and >= 1 terrain class, got {num_envs} and {}",
                classes.len()
            )));
        }
        let mut envs = Vec::with_capacity(num_envs);
        for i in 0..num_envs {
            let class = classes[i % classes.len()];
            envs.push(BipedEnv::new(cfg.clone(), class, 0, master_seed, i as u64)?);
        }
        Ok(VecEnv {
            envs,
            curricula: vec![Curriculum::default(); num_envs],
            recent: VecDeque::with_capacity(SUCCESS_WINDOW),
            episodes_finished: 0,
        })
    }

    pub fn num_envs(&self) -> usize {
        self.envs.len()
    }

    pub fn reset_all(&mut self) -> Result<Vec<EnvStep>> {
        self.envs.iter_mut().map(|e| e.reset()).collect()
    }

    /// Success rate over the last `SUCCESS_WINDOW` finished episodes.
    pub fn success_rate(&self) -> Option<f64> {
        if self.recent.is_empty() {
            return None;
        }
        let hits = self.recent.iter().filter(|s| **s).count();
        Some(hits as f64 / self.recent.len() as f64)
    }

    pub fn episodes_finished(&self) -> u64 {
        self.episodes_finished
    }

    /// Environment count per terrain level, `0..=max_level`.
    pub fn level_histogram(&self) -> Vec<u32> {
        let max_level = self.curricula.iter().map(|c| c.max_level).max().unwrap_or(0);
        let mut hist = vec![0u32; max_level as usize + 1];
        for env in &self.envs {
            hist[env.level().min(max_level) as usize] += 1;
        }
        hist
    }

    /// Record the finished episode of environment `i` against its
    /// curriculum, apply any level change, and reset in place.
    fn finish_episode(&mut self, i: usize) -> Result<EnvStep> {
        let success = self.envs[i].episode_success();
        self.episodes_finished += 1;
        if self.recent.len() == SUCCESS_WINDOW {
            self.recent.pop_front();
        }
        self.recent.push_back(success);
        if let Some(level) = self.curricula[i].record(success, self.envs[i].level()) {
            self.envs[i].set_level(level);
        }
        self.envs[i].reset()
    }
}

/// One rollout of `horizon` steps from `num_envs` environments, stored
/// step-major: element `t` of each per-step vector is the `[N, ·]` batch at
/// control step `t`. Hidden states are stored only at the rollout start;
/// the update re-unrolls from them.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub horizon: usize,
    pub num_envs: usize,
    pub obs: Vec<Tensor>,
    pub privileged: Vec<Tensor>,
    pub maps: Vec<Tensor>,
    pub actions: Vec<Tensor>,
    pub logp: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
    pub rewards: Vec<Vec<f64>>,
    pub dones: Vec<Vec<bool>>,
    /// Critic value for the state after the final step, per environment
    /// (unused by GAE wherever the final step ended its episode).
    pub bootstrap: Vec<f64>,
    pub actor_h0: Tensor,
    pub critic_h0: Tensor,
    /// Mean per-step weighted reward over the whole rollout.
    pub mean_reward: f64,
    /// Episodes that finished during this rollout.
    pub episodes_finished: u32,
}

/// Steps environments under the current policy and records trajectories.
pub struct Collector {
    pub actor_h: Tensor,
    pub critic_h: Tensor,
    dims: NetDims,
    last: Vec<EnvStep>,
    rng: ChaCha8Rng,
}

impl Collector {
    /// Resets every environment and starts from zero hidden states. Action
    /// noise is drawn from a stream independent of the environments'.
    pub fn new(venv: &mut VecEnv, dims: NetDims, master_seed: u64) -> Result<Collector> {
        let cfg = &venv.envs[0].cfg;
        if dims.obs != cfg.obs_width()
            || dims.privileged != cfg.privileged_width()
            || dims.action != cfg.action_width()
            || dims.map_rows * dims.map_cols != cfg.map_width()
        {
            return Err(Error::config(format!(
                "net dims {:?} do not match the environment widths obs {} / priv {} / act {} / map {}",
                dims,
                cfg.obs_width(),
                cfg.privileged_width(),
                cfg.action_width(),
                cfg.map_width()
            )));
        }
        let n = venv.num_envs();
        let last = venv.reset_all()?;
        Ok(Collector {
            actor_h: Tensor::zeros(&[n, dims.hidden]),
            critic_h: Tensor::zeros(&[n, dims.hidden]),
            dims,
            last,
            rng: SeedStream::new(master_seed).with_str("action-noise").rng(),
        })
    }

    fn batch_obs(&self) -> Result<Tensor> {
        Tensor::from_rows(self.last.len(), self.dims.obs, |i| self.last[i].obs.clone())
    }

    fn batch_privileged(&self) -> Result<Tensor> {
        Tensor::from_rows(self.last.len(), self.dims.privileged, |i| {
            self.last[i].privileged.clone()
        })
    }

    fn batch_maps(&self) -> Result<Tensor> {
        let n = self.last.len();
        let (r, c) = (self.dims.map_rows, self.dims.map_cols);
        let mut data = Vec::with_capacity(n * r * c);
        for step in &self.last {
            if step.map.rows != r || step.map.cols != c {
                return Err(Error::config(format!(
                    "terrain patch is {}x{}, nets expect {}x{}",
                    step.map.rows, step.map.cols, r, c
                )));
            }
            data.extend_from_slice(&step.map.values);
        }
        Tensor::from_vec(&[n, 1, r, c], data)
    }

    fn zero_hidden_row(&mut self, i: usize) {
        let cols = self.dims.hidden;
        for h in [&mut self.actor_h, &mut self.critic_h] {
            for v in &mut h.data_mut()[i * cols..(i + 1) * cols] {
                *v = 0.0;
            }
        }
    }

    pub fn collect(
        &mut self,
        venv: &mut VecEnv,
        actor: &ActorNet,
        critic: &CriticNet,
        horizon: usize,
    ) -> Result<Trajectory> {
        if horizon == 0 {
            return Err(Error::config("rollout horizon must be >= 1"));
        }
        let n = venv.num_envs();
        if n != self.last.len() {
            return Err(Error::config(format!(
                "collector tracks {} environments, vec env has {n}",
                self.last.len()
            )));
        }
        let act_w = self.dims.action;
        let mut traj = Trajectory {
            horizon,
            num_envs: n,
            obs: Vec::with_capacity(horizon),
            privileged: Vec::with_capacity(horizon),
            maps: Vec::with_capacity(horizon),
            actions: Vec::with_capacity(horizon),
            logp: Vec::with_capacity(horizon),
            values: Vec::with_capacity(horizon),
            rewards: Vec::with_capacity(horizon),
            dones: Vec::with_capacity(horizon),
            bootstrap: vec![0.0; n],
            actor_h0: self.actor_h.clone(),
            critic_h0: self.critic_h.clone(),
            mean_reward: 0.0,
            episodes_finished: 0,
        };

        for _ in 0..horizon {
            let obs = self.batch_obs()?;
            let privileged = self.batch_privileged()?;
            let maps = self.batch_maps()?;

            let (mean, m_a) = actor.forward(&obs, &self.actor_h)?;
            let (value, m_c, _u) = critic.forward(&privileged, &maps, &self.critic_h)?;
            self.actor_h = m_a;
            self.critic_h = m_c;

            let (action, logp) = sample_action(&mean, &actor.log_std, &mut self.rng)?;

            let mut rewards = Vec::with_capacity(n);
            let mut dones = Vec::with_capacity(n);
            for i in 0..n {
                let row = &action.data()[i * act_w..(i + 1) * act_w];
                let step = venv.envs[i].step(row)?;
                rewards.push(step.reward);
                dones.push(step.done);
                if step.done {
                    traj.episodes_finished += 1;
                    self.last[i] = venv.finish_episode(i)?;
                    self.zero_hidden_row(i);
                } else {
                    self.last[i] = step;
                }
            }

            traj.mean_reward += rewards.iter().sum::<f64>();
            traj.obs.push(obs);
            traj.privileged.push(privileged);
            traj.maps.push(maps);
            traj.actions.push(action);
            traj.logp.push(logp.data().to_vec());
            traj.values.push(value.data().to_vec());
            traj.rewards.push(rewards);
            traj.dones.push(dones);
        }
        traj.mean_reward /= (horizon * n) as f64;

        // Bootstrap values for the post-rollout states; peeks the critic
        // without advancing its hidden state.
        let privileged = self.batch_privileged()?;
        let maps = self.batch_maps()?;
        let (value, _m_c, _u) = critic.forward(&privileged, &maps, &self.critic_h)?;
        traj.bootstrap = value.data().to_vec();
        Ok(traj)
    }
}
