//! The biped POMDP: wraps the rigid-body dynamics in an episode loop with
//! domain randomization, velocity commands, push disturbances, sensor
//! noise, the adaptive gait clock, reward evaluation, and observation
//! assembly for both the actor (proprioception only) and the critic
//! (privileged state plus terrain patches).
//!
//! One `BipedEnv` owns one robot on one generated heightfield. Every
//! random draw comes from a per-episode stream seeded by
//! (master seed, env id, episode index), in a fixed order, so a rollout is
//! reproducible byte-for-byte from the config and seed.

use crate::clock::{advance, ClockConfig, PhaseState};
use crate::error::{Error, Result};
use crate::rewards::{compute_rewards, RewardBreakdown, RewardConfig, RewardInputs};
use crate::rng::SeedStream;
use crate::sim::dynamics::{
    BipedState, DynamicsConfig, DynamicsModel, SimParams, ITH, IX, IZ, N_JOINTS,
};
use crate::terrain::{generate, HeightPatch, TerrainClass, TerrainConfig, TerrainField};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Width of the previous-action slot in the observation. Fixed at the full
/// action width so ablations that shrink the action keep the layout.
pub const PREV_ACTION_SLOT: usize = 7;
/// Joint-increment entries of the action.
pub const JOINT_ACTIONS: usize = N_JOINTS;
/// Clock-delta entries of the action in the full mode.
pub const CLOCK_ACTIONS: usize = 3;

/// Which parts of the gait clock the policy controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaitMode {
    /// Policy outputs joint targets and clock deltas.
    Full,
    /// Clock runs open-loop; the policy's delta outputs are masked to zero.
    FixedCycle,
    /// No clock at all: the observation drops the phase features and the
    /// action drops the deltas. An internal open-loop clock still drives
    /// the contact-pattern reward so every mode optimizes the same
    /// objective; the policy simply cannot see or steer it.
    ClockFree,
}

impl GaitMode {
    pub fn action_width(&self) -> usize {
        match self {
            GaitMode::ClockFree => JOINT_ACTIONS,
            _ => JOINT_ACTIONS + CLOCK_ACTIONS,
        }
    }

    pub fn has_phase_obs(&self) -> bool {
        !matches!(self, GaitMode::ClockFree)
    }
}

/// Additive uniform sensor noise bounds (zero-centered).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub enabled: bool,
    /// Joint angles, radians.
    pub q: f64,
    /// Joint velocities, rad/s.
    pub dq: f64,
    /// Angular velocity, rad/s.
    pub omega: f64,
    /// Projected gravity components.
    pub gravity: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { enabled: true, q: 0.01, dq: 0.1, omega: 0.05, gravity: 0.02 }
    }
}

/// Per-episode physical randomization ranges.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RandomizationConfig {
    pub enabled: bool,
    pub mass_scale: [f64; 2],
    /// Torso CoM fore/aft offset bound, meters (symmetric).
    pub com_offset: f64,
    pub motor_strength: [f64; 2],
    pub friction: [f64; 2],
}

impl Default for RandomizationConfig {
    fn default() -> Self {
        RandomizationConfig {
            enabled: true,
            mass_scale: [0.95, 1.05],
            com_offset: 0.05,
            motor_strength: [0.8, 1.2],
            friction: [0.4, 1.1],
        }
    }
}

/// Random push disturbances: instantaneous velocity kicks and short
/// constant forces on the pelvis, scheduled at one random time per
/// interval.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PushConfig {
    pub enabled: bool,
    pub interval_seconds: f64,
    /// Velocity-kick magnitude upper bound, m/s.
    pub impulse_max: f64,
    /// Per-axis force bound, newtons (symmetric).
    pub force_max: f64,
    pub force_duration: f64,
}

impl Default for PushConfig {
    fn default() -> Self {
        PushConfig {
            enabled: true,
            interval_seconds: 5.0,
            impulse_max: 0.8,
            force_max: 50.0,
            force_duration: 0.2,
        }
    }
}

/// Forward-velocity command distribution.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CommandConfig {
    pub v_min: f64,
    pub v_max: f64,
    pub resample_seconds: f64,
    /// Evaluation override: hold this velocity for the whole episode.
    pub fixed: Option<f64>,
}

impl Default for CommandConfig {
    fn default() -> Self {
        CommandConfig { v_min: 0.0, v_max: 1.0, resample_seconds: 5.0, fixed: None }
    }
}

/// Multipliers applied to raw sensor values before they enter the
/// observation vector.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ObsScales {
    pub dq: f64,
    pub omega: f64,
}

impl Default for ObsScales {
    fn default() -> Self {
        ObsScales { dq: 0.05, omega: 0.25 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub dynamics: DynamicsConfig,
    pub clock: ClockConfig,
    pub rewards: RewardConfig,
    pub terrain: TerrainConfig,
    pub noise: NoiseConfig,
    pub randomization: RandomizationConfig,
    pub pushes: PushConfig,
    pub command: CommandConfig,
    pub mode: GaitMode,
    pub episode_seconds: f64,
    /// Fall when pelvis height above local terrain drops below this
    /// fraction of the nominal standing height.
    pub fall_height_frac: f64,
    /// Fall when |pitch| exceeds this, radians.
    pub fall_pitch: f64,
    /// Joint-increment clamp, radians.
    pub action_joint_limit: f64,
    /// ω̄ exponential-moving-average time constant, seconds.
    pub omega_ema_seconds: f64,
    pub scales: ObsScales,
    /// Timeout episodes count as curriculum successes when the robot
    /// covered at least this fraction of the distance it was commanded to.
    pub tracking_success_frac: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            dynamics: DynamicsConfig::default(),
            clock: ClockConfig::default(),
            rewards: RewardConfig::default(),
            terrain: TerrainConfig::default(),
            noise: NoiseConfig::default(),
            randomization: RandomizationConfig::default(),
            pushes: PushConfig::default(),
            command: CommandConfig::default(),
            mode: GaitMode::Full,
            episode_seconds: 20.0,
            fall_height_frac: 0.4,
            fall_pitch: 1.0,
            action_joint_limit: 1.0,
            omega_ema_seconds: 0.5,
            scales: ObsScales::default(),
            tracking_success_frac: 0.8,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.dynamics.validate()?;
        self.clock.validate()?;
        self.rewards.validate()?;
        self.terrain.validate()?;
        let dt = self.dynamics.dt_control();
        if (self.clock.dt - dt).abs() > 1e-12 {
            return Err(Error::config(format!(
                "clock.dt {} must equal the control step {} (dt_sim × substeps)",
                self.clock.dt, dt
            )));
        }
        if !(self.episode_seconds > 0.0) {
            return Err(Error::config("env.episode_seconds must be > 0".to_string()));
        }
        if !(self.fall_height_frac > 0.0 && self.fall_height_frac < 1.0) {
            return Err(Error::config(format!(
                "env.fall_height_frac must be in (0,1), got {}",
                self.fall_height_frac
            )));
        }
        if self.command.v_min > self.command.v_max {
            return Err(Error::config(format!(
                "env.command range inverted: [{}, {}]",
                self.command.v_min, self.command.v_max
            )));
        }
        for (name, [lo, hi]) in [
            ("mass_scale", self.randomization.mass_scale),
            ("motor_strength", self.randomization.motor_strength),
            ("friction", self.randomization.friction),
        ] {
            if lo > hi || lo <= 0.0 {
                return Err(Error::config(format!(
                    "env.randomization.{name} range invalid: [{lo}, {hi}]"
                )));
            }
        }
        if !(self.action_joint_limit > 0.0) {
            return Err(Error::config("env.action_joint_limit must be > 0".to_string()));
        }
        if !(self.omega_ema_seconds > 0.0) {
            return Err(Error::config("env.omega_ema_seconds must be > 0".to_string()));
        }
        if !(0.0..=1.0).contains(&self.tracking_success_frac) {
            return Err(Error::config(
                "env.tracking_success_frac must be in [0,1]".to_string(),
            ));
        }
        Ok(())
    }

    pub fn action_width(&self) -> usize {
        self.mode.action_width()
    }

    /// Proprioceptive observation width:
    /// command 3 + gravity 3 + q 4 + q̇ 4 + prev action 7 + ω 3 + ω̄ 1
    /// (+ phase 2 unless clock-free).
    pub fn obs_width(&self) -> usize {
        let base = 3 + 3 + N_JOINTS + N_JOINTS + PREV_ACTION_SLOT + 3 + 1;
        if self.mode.has_phase_obs() {
            base + 2
        } else {
            base
        }
    }

    /// Privileged width: observation + true velocity 2 + CoM offset 2 +
    /// two foot patches + randomized parameters 4.
    pub fn privileged_width(&self) -> usize {
        let patch = self.terrain.foot_patch_size * self.terrain.foot_patch_size;
        self.obs_width() + 2 + 2 + 2 * patch + 4
    }

    /// Critic height-map patch element count.
    pub fn map_width(&self) -> usize {
        self.terrain.global_patch_rows * self.terrain.global_patch_cols
    }
}

/// A scheduled disturbance.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Push {
    /// Instantaneous velocity change on (ẋ, ż) at `at` seconds.
    Impulse { at: f64, dv: [f64; 2] },
    /// Constant pelvis force over [at, at + duration).
    Force { at: f64, until: f64, f: [f64; 2] },
}

/// Everything the trainer consumes after one control step.
#[derive(Debug, Clone)]
pub struct EnvStep {
    pub obs: Vec<f64>,
    pub privileged: Vec<f64>,
    /// Body-relative global height patch for the critic's conv encoder.
    pub map: HeightPatch,
    /// Weighted reward total for this step (zero on reset).
    pub reward: f64,
    pub breakdown: RewardBreakdown,
    pub done: bool,
    /// Episode ended by the clock, not by a fall.
    pub timeout: bool,
    /// Numeric blow-up inside the physics step.
    pub fault: bool,
}

/// End-of-episode summary for curricula and evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeOutcome {
    pub fell: bool,
    pub fault: bool,
    pub timeout: bool,
    pub goal_reached: bool,
    /// Forward distance actually covered, meters.
    pub distance: f64,
    /// Integral of the commanded forward velocity, meters.
    pub commanded_distance: f64,
    pub steps: u32,
}

impl EpisodeOutcome {
    /// Millimetre slack on the tracked-distance test so a zero-velocity
    /// command counts as tracked when the robot merely stands still —
    /// numerical settling drift must not flip a perfect episode to failure.
    pub const DISTANCE_SLACK: f64 = 1e-3;

    /// Curriculum success: never fell, and either crossed the goal or (on
    /// a timeout with a slow command) covered at least `tracking_frac` of
    /// the distance it was asked to. `goal_span` is the start-to-goal
    /// distance.
    pub fn success(&self, goal_span: f64, tracking_frac: f64) -> bool {
        if self.fell || self.fault {
            return false;
        }
        let target = goal_span.min(self.commanded_distance * tracking_frac);
        self.goal_reached || self.distance >= target - Self::DISTANCE_SLACK
    }
}

/// Success-rate window driving terrain-level promotion.
#[derive(Debug, Clone)]
pub struct Curriculum {
    window: std::collections::VecDeque<bool>,
    pub window_len: usize,
    pub promote_at: f64,
    pub demote_below: f64,
    pub max_level: u32,
}

impl Default for Curriculum {
    fn default() -> Self {
        Curriculum {
            window: std::collections::VecDeque::new(),
            window_len: 10,
            promote_at: 0.8,
            demote_below: 0.4,
            max_level: 9,
        }
    }
}

impl Curriculum {
    /// Record an episode outcome; returns the new level if it changed.
    pub fn record(&mut self, success: bool, level: u32) -> Option<u32> {
        self.window.push_back(success);
        if self.window.len() > self.window_len {
            self.window.pop_front();
        }
        if self.window.len() < self.window_len {
            return None;
        }
        let rate =
            self.window.iter().filter(|&&s| s).count() as f64 / self.window.len() as f64;
        let next = if rate >= self.promote_at {
            (level + 1).min(self.max_level)
        } else if rate < self.demote_below {
            level.saturating_sub(1)
        } else {
            level
        };
        if next != level {
            self.window.clear();
            Some(next)
        } else {
            None
        }
    }
}

pub struct BipedEnv {
    pub cfg: EnvConfig,
    master_seed: u64,
    env_id: u64,
    episode: u64,
    class: TerrainClass,
    level: u32,

    model: DynamicsModel,
    state: BipedState,
    clock: PhaseState,
    terrain: TerrainField,
    rng: ChaCha8Rng,

    t: f64,
    steps: u32,
    command: [f64; 3],
    next_resample: f64,
    prev_action: Vec<f64>,
    prev_prev_action: Vec<f64>,
    prev_joint_vels: [f64; N_JOINTS],
    prev_in_contact: [bool; 2],
    omega_bar: f64,
    pushes: Vec<Push>,
    next_push: usize,

    goal_reached: bool,
    fell: bool,
    fault: bool,
    timeout: bool,
    commanded_distance: f64,
    spawn_x: f64,
}

impl BipedEnv {
    pub fn new(
        cfg: EnvConfig,
        class: TerrainClass,
        level: u32,
        master_seed: u64,
        env_id: u64,
    ) -> Result<BipedEnv> {
        cfg.validate()?;
        let mut env = BipedEnv {
            model: DynamicsModel::new(cfg.dynamics.clone(), SimParams::nominal())?,
            state: BipedState::reference(&cfg.dynamics, 0.0, cfg.dynamics.nominal_height()),
            clock: PhaseState::init(&cfg.clock),
            terrain: generate(class, level, 0, &cfg.terrain)?,
            rng: SeedStream::new(master_seed).with(env_id).rng(),
            cfg,
            master_seed,
            env_id,
            episode: 0,
            class,
            level,
            t: 0.0,
            steps: 0,
            command: [0.0; 3],
            next_resample: 0.0,
            prev_action: Vec::new(),
            prev_prev_action: Vec::new(),
            prev_joint_vels: [0.0; N_JOINTS],
            prev_in_contact: [false; 2],
            omega_bar: 0.0,
            pushes: Vec::new(),
            next_push: 0,
            goal_reached: false,
            fell: false,
            fault: false,
            timeout: false,
            commanded_distance: 0.0,
            spawn_x: 0.0,
        };
        env.reset()?;
        Ok(env)
    }

    pub fn class(&self) -> TerrainClass {
        self.class
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    /// Takes effect at the next reset.
    pub fn set_level(&mut self, level: u32) {
        self.level = level;
    }

    pub fn terrain(&self) -> &TerrainField {
        &self.terrain
    }

    pub fn state(&self) -> &BipedState {
        &self.state
    }

    pub fn clock(&self) -> &PhaseState {
        &self.clock
    }

    pub fn command(&self) -> [f64; 3] {
        self.command
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn params(&self) -> &SimParams {
        &self.model.params
    }

    pub fn outcome(&self) -> EpisodeOutcome {
        EpisodeOutcome {
            fell: self.fell,
            fault: self.fault,
            timeout: self.timeout,
            goal_reached: self.goal_reached,
            distance: self.state.q[IX] - self.spawn_x,
            commanded_distance: self.commanded_distance,
            steps: self.steps,
        }
    }

    /// Curriculum success for the episode just finished.
    pub fn episode_success(&self) -> bool {
        let span = self.terrain.goal()[0] - self.terrain.start()[0];
        self.outcome().success(span, self.cfg.tracking_success_frac)
    }

    /// Begin a new episode: fresh randomization, terrain, command, push
    /// schedule, and clock, with the robot standing at the start marker.
    pub fn reset(&mut self) -> Result<EnvStep> {
        self.episode += 1;
        self.rng = SeedStream::new(self.master_seed)
            .with(self.env_id)
            .with(self.episode)
            .rng();

        // Fixed draw order: physics params, terrain seed, command,
        // pushes. Changing this order changes every seeded rollout.
        let params = self.draw_params();
        self.model = DynamicsModel::new(self.cfg.dynamics.clone(), params)?;
        let terrain_seed: u64 = self.rng.gen();
        self.terrain = generate(self.class, self.level, terrain_seed, &self.cfg.terrain)?;
        self.command = self.draw_command();
        self.next_resample = self.cfg.command.resample_seconds;
        self.pushes = self.draw_pushes();
        self.next_push = 0;

        let start = self.terrain.start();
        let ground = self.terrain.height_at(start[0], start[1]);
        // Spawn with the contact springs preloaded to the robot's weight
        // (feet sunk Mg/2k each) instead of at exact touch, so the episode
        // does not open with a touchdown bounce.
        let d = &self.cfg.dynamics;
        let sink = d.total_mass() * d.gravity / (2.0 * d.contact_stiffness);
        self.state = BipedState::reference(
            &self.cfg.dynamics,
            start[0],
            ground + self.cfg.dynamics.nominal_height() - sink,
        );
        self.spawn_x = start[0];
        self.clock = PhaseState::init(&self.cfg.clock);

        self.t = 0.0;
        self.steps = 0;
        self.prev_action = vec![0.0; self.cfg.action_width()];
        self.prev_prev_action = vec![0.0; self.cfg.action_width()];
        self.prev_joint_vels = [0.0; N_JOINTS];
        self.prev_in_contact = [false; 2];
        self.omega_bar = 0.0;
        self.goal_reached = false;
        self.fell = false;
        self.fault = false;
        self.timeout = false;
        self.commanded_distance = 0.0;

        let (obs, privileged, map) = self.assemble()?;
        Ok(EnvStep {
            obs,
            privileged,
            map,
            reward: 0.0,
            breakdown: RewardBreakdown::default(),
            done: false,
            timeout: false,
            fault: false,
        })
    }

    fn draw_params(&mut self) -> SimParams {
        let r = &self.cfg.randomization;
        if !r.enabled {
            // Keep the stream aligned whether or not randomization is on.
            let _: [f64; 4] = [
                self.rng.gen(),
                self.rng.gen(),
                self.rng.gen(),
                self.rng.gen(),
            ];
            return SimParams::nominal();
        }
        SimParams {
            mass_scale: self.rng.gen_range(r.mass_scale[0]..=r.mass_scale[1]),
            com_offset_x: self.rng.gen_range(-r.com_offset..=r.com_offset),
            motor_strength: self.rng.gen_range(r.motor_strength[0]..=r.motor_strength[1]),
            friction: self.rng.gen_range(r.friction[0]..=r.friction[1]),
        }
    }

    fn draw_command(&mut self) -> [f64; 3] {
        let c = &self.cfg.command;
        let v = match c.fixed {
            Some(v) => {
                // Burn a draw to keep the stream layout identical.
                let _: f64 = self.rng.gen();
                v
            }
            None => {
                if c.v_max > c.v_min {
                    self.rng.gen_range(c.v_min..=c.v_max)
                } else {
                    let _: f64 = self.rng.gen();
                    c.v_min
                }
            }
        };
        [v, 0.0, 0.0]
    }

    fn draw_pushes(&mut self) -> Vec<Push> {
        let p = &self.cfg.pushes;
        if !p.enabled || p.interval_seconds <= 0.0 {
            return Vec::new();
        }
        let n = (self.cfg.episode_seconds / p.interval_seconds).floor() as usize;
        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            let at = k as f64 * p.interval_seconds
                + self.rng.gen_range(0.0..p.interval_seconds);
            if self.rng.gen_bool(0.5) {
                let mag = self.rng.gen_range(0.0..=p.impulse_max);
                let ang = self.rng.gen_range(0.0..std::f64::consts::TAU);
                out.push(Push::Impulse { at, dv: [mag * ang.cos(), mag * ang.sin()] });
            } else {
                let f = [
                    self.rng.gen_range(-p.force_max..=p.force_max),
                    self.rng.gen_range(-p.force_max..=p.force_max),
                ];
                out.push(Push::Force { at, until: at + p.force_duration, f });
            }
        }
        out
    }

    /// Advance one control step under `action` (joint increments followed
    /// by clock deltas in the full mode). Numeric blow-ups terminate the
    /// episode with the fault flag rather than erroring out.
    pub fn step(&mut self, action: &[f64]) -> Result<EnvStep> {
        if action.len() != self.cfg.action_width() {
            return Err(Error::config(format!(
                "action width {} does not match the {:?} mode ({} expected)",
                action.len(),
                self.cfg.mode,
                self.cfg.action_width()
            )));
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::numeric("non-finite action".to_string()));
        }
        if self.fell || self.timeout {
            return Err(Error::config(
                "step called on a finished episode; call reset".to_string(),
            ));
        }

        let dt = self.cfg.dynamics.dt_control();

        // Clamp joint increments around the reference pose.
        let lim = self.cfg.action_joint_limit;
        let mut targets = self.cfg.dynamics.reference_pose;
        let mut clamped = action.to_vec();
        for j in 0..N_JOINTS {
            clamped[j] = clamped[j].clamp(-lim, lim);
            targets[j] += clamped[j];
        }

        // The clock sees the policy's deltas only in the full mode; the
        // ablations run it open-loop.
        let raw_deltas = match self.cfg.mode {
            GaitMode::Full => [action[4], action[5], action[6]],
            _ => [0.0; 3],
        };
        self.clock = advance(&self.clock, raw_deltas, &self.cfg.clock)?;

        // Disturbances scheduled inside (t, t+dt].
        let mut ext_force = [0.0; 2];
        while self.next_push < self.pushes.len() {
            match self.pushes[self.next_push] {
                Push::Impulse { at, dv } if at <= self.t + dt => {
                    self.state.dq[IX] += dv[0];
                    self.state.dq[IZ] += dv[1];
                    self.next_push += 1;
                }
                _ => break,
            }
        }
        for push in &self.pushes {
            if let Push::Force { at, until, f } = *push {
                if self.t >= at && self.t < until {
                    ext_force[0] += f[0];
                    ext_force[1] += f[1];
                }
            }
        }

        let prev_dq = self.state.joint_vels();
        let outcome = match self.model.step(&mut self.state, &targets, &self.terrain, ext_force)
        {
            Ok(o) => o,
            Err(Error::Numeric(_)) => {
                self.fault = true;
                self.fell = true;
                let (obs, privileged, map) = self.last_finite_view();
                return Ok(EnvStep {
                    obs,
                    privileged,
                    map,
                    reward: 0.0,
                    breakdown: RewardBreakdown::default(),
                    done: true,
                    timeout: false,
                    fault: true,
                });
            }
            Err(e) => return Err(e),
        };

        self.t += dt;
        self.steps += 1;
        self.commanded_distance += self.command[0] * dt;

        // Mean |pitch rate| tracker for the observation.
        let alpha = 1.0 - (-dt / self.cfg.omega_ema_seconds).exp();
        self.omega_bar += alpha * (self.state.dq[ITH].abs() - self.omega_bar);

        let new_contact = [
            outcome.contacts[0].in_contact && !self.prev_in_contact[0],
            outcome.contacts[1].in_contact && !self.prev_in_contact[1],
        ];

        let full_action = self.pad_action(&clamped);
        let prev_full = self.pad_action(&self.prev_action.clone());
        let prev_prev_full = self.pad_action(&self.prev_prev_action.clone());
        let inputs = RewardInputs {
            state: &self.state,
            prev_joint_vels: prev_dq,
            command: self.command,
            torques: outcome.mean_torques,
            targets,
            default_pose: self.cfg.dynamics.reference_pose,
            joint_lower: self.cfg.dynamics.joint_lower(),
            joint_upper: self.cfg.dynamics.joint_upper(),
            joint_vel_limit: self.cfg.dynamics.joint_vel_limit,
            torque_limit: self.cfg.dynamics.torque_limit,
            kp: self.cfg.dynamics.kp,
            action: &full_action,
            prev_action: &prev_full,
            prev_prev_action: &prev_prev_full,
            contacts: &outcome.contacts,
            new_contact,
            stance_mask: self.clock.stance,
            terrain: &self.terrain,
            dt,
        };
        let breakdown = compute_rewards(&inputs, &self.cfg.rewards);

        self.prev_prev_action = std::mem::take(&mut self.prev_action);
        self.prev_action = clamped;
        self.prev_joint_vels = self.state.joint_vels();
        self.prev_in_contact = [
            outcome.contacts[0].in_contact,
            outcome.contacts[1].in_contact,
        ];

        if self.command[0] > 0.0 && self.state.q[IX] >= self.terrain.goal()[0] {
            self.goal_reached = true;
        }
        if self.cfg.command.fixed.is_none() && self.t >= self.next_resample {
            self.command = self.draw_command();
            self.next_resample += self.cfg.command.resample_seconds;
        }

        let rel_height =
            self.state.q[IZ] - self.terrain.height_at(self.state.q[IX], 0.0);
        self.fell = rel_height
            < self.cfg.fall_height_frac * self.cfg.dynamics.nominal_height()
            || self.state.q[ITH].abs() > self.cfg.fall_pitch;
        self.timeout = !self.fell && self.t >= self.cfg.episode_seconds - 1e-9;

        let (obs, privileged, map) = self.assemble()?;
        Ok(EnvStep {
            obs,
            privileged,
            map,
            reward: breakdown.weighted_total,
            breakdown,
            done: self.fell || self.timeout,
            timeout: self.timeout,
            fault: false,
        })
    }

    /// Zero-pad an action to the fixed previous-action slot width.
    fn pad_action(&self, a: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; PREV_ACTION_SLOT];
        out[..a.len()].copy_from_slice(a);
        out
    }

    /// Observation views for a fault return: the pre-step state is still
    /// finite, so reuse it with noise disabled to avoid consuming rng.
    fn last_finite_view(&mut self) -> (Vec<f64>, Vec<f64>, HeightPatch) {
        let saved = self.cfg.noise.enabled;
        self.cfg.noise.enabled = false;
        let view = self.assemble().unwrap_or_else(|_| {
            let w = (self.cfg.obs_width(), self.cfg.privileged_width());
            (
                vec![0.0; w.0],
                vec![0.0; w.1],
                HeightPatch {
                    values: vec![0.0; self.cfg.map_width()],
                    rows: self.cfg.terrain.global_patch_rows,
                    cols: self.cfg.terrain.global_patch_cols,
                },
            )
        });
        self.cfg.noise.enabled = saved;
        view
    }

    /// Build (observation, privileged state, critic height map) from the
    /// current state. The privileged vector begins with the observation
    /// itself, making the information superset true by construction.
    fn assemble(&mut self) -> Result<(Vec<f64>, Vec<f64>, HeightPatch)> {
        let s = &self.state;
        let kin = self.model.kinematics(s);
        let theta = s.q[ITH];
        let noise = self.cfg.noise.clone();
        let mut draw = |bound: f64| -> f64 {
            if noise.enabled && bound > 0.0 {
                self.rng.gen_range(-bound..=bound)
            } else {
                0.0
            }
        };

        let mut obs = Vec::with_capacity(self.cfg.obs_width());
        obs.extend_from_slice(&self.command);
        // Projected gravity in the body frame; planar slots still carry
        // sensor noise.
        obs.push(-theta.sin() + draw(noise.gravity));
        obs.push(draw(noise.gravity));
        obs.push(-theta.cos() + draw(noise.gravity));
        for &q in &s.joint_angles() {
            obs.push(q + draw(noise.q));
        }
        for &dq in &s.joint_vels() {
            obs.push((dq + draw(noise.dq)) * self.cfg.scales.dq);
        }
        for i in 0..PREV_ACTION_SLOT {
            obs.push(self.prev_action.get(i).copied().unwrap_or(0.0));
        }
        obs.push(draw(noise.omega) * self.cfg.scales.omega);
        obs.push((s.dq[ITH] + draw(noise.omega)) * self.cfg.scales.omega);
        obs.push(draw(noise.omega) * self.cfg.scales.omega);
        obs.push(self.omega_bar * self.cfg.scales.omega);
        if self.cfg.mode.has_phase_obs() {
            obs.extend_from_slice(&self.clock.phase_features());
        }
        debug_assert_eq!(obs.len(), self.cfg.obs_width());

        let mut privileged = obs.clone();
        privileged.push(s.dq[IX]);
        privileged.push(s.dq[IZ]);
        privileged.push(kin.com[0] - s.q[IX]);
        privileged.push(kin.com[1] - s.q[IZ]);
        let n = self.cfg.terrain.foot_patch_size;
        let spacing = self.cfg.terrain.foot_patch_spacing;
        for foot in &kin.feet {
            let patch =
                self.terrain
                    .sample_patch([foot.pos[0], 0.0], n, n, spacing, foot.pos[1]);
            privileged.extend_from_slice(&patch.values);
        }
        privileged.extend_from_slice(&self.model.params.as_array());
        debug_assert_eq!(privileged.len(), self.cfg.privileged_width());

        let map = self.terrain.sample_patch(
            [s.q[IX], 0.0],
            self.cfg.terrain.global_patch_rows,
            self.cfg.terrain.global_patch_cols,
            self.cfg.terrain.global_patch_spacing,
            s.q[IZ],
        );
        Ok((obs, privileged, map))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn quiet_cfg() -> EnvConfig {
        EnvConfig {
            noise: NoiseConfig { enabled: false, ..NoiseConfig::default() },
            randomization: RandomizationConfig {
                enabled: false,
                ..RandomizationConfig::default()
            },
            pushes: PushConfig { enabled: false, ..PushConfig::default() },
            command: CommandConfig { fixed: Some(0.0), ..CommandConfig::default() },
            ..EnvConfig::default()
        }
    }

    fn flat_env(cfg: EnvConfig) -> BipedEnv {
        BipedEnv::new(cfg, TerrainClass::Flat, 0, 1234, 0).unwrap()
    }

    #[test]
    fn widths_follow_the_mode() {
        for (mode, obs_w, act_w, priv_w) in [
            (GaitMode::Full, 27, 7, 85),
            (GaitMode::FixedCycle, 27, 7, 85),
            (GaitMode::ClockFree, 25, 4, 83),
        ] {
            let cfg = EnvConfig { mode, ..quiet_cfg() };
            assert_eq!(cfg.obs_width(), obs_w, "{mode:?}");
            assert_eq!(cfg.action_width(), act_w, "{mode:?}");
            assert_eq!(cfg.privileged_width(), priv_w, "{mode:?}");
            assert_eq!(cfg.map_width(), 187);
            let env = flat_env(cfg);
            let step = env_first_step(env, act_w);
            assert_eq!(step.obs.len(), obs_w);
            assert_eq!(step.privileged.len(), priv_w);
            assert_eq!(step.map.values.len(), 187);
        }
    }

    fn env_first_step(mut env: BipedEnv, act_w: usize) -> EnvStep {
        env.step(&vec![0.0; act_w]).unwrap()
    }

    #[test]
    fn privileged_state_embeds_the_observation_verbatim() {
        let mut env = flat_env(quiet_cfg());
        let step = env.step(&vec![0.0; 7]).unwrap();
        assert_eq!(&step.privileged[..step.obs.len()], &step.obs[..]);
    }

    #[test]
    fn golden_observation_layout() {
        // Noise off, fresh reset: gravity (0,0,-1), q at the reference
        // pose, everything dynamic zero, stance phase features at phi=0.
        let cfg = quiet_cfg();
        let mut env = flat_env(EnvConfig {
            command: CommandConfig { fixed: Some(0.3), ..cfg.command.clone() },
            ..cfg
        });
        let step = env.reset().unwrap();
        let pose = env.cfg.dynamics.reference_pose;
        let mut expect = vec![0.3, 0.0, 0.0]; // command
        expect.extend_from_slice(&[0.0, 0.0, -1.0]); // gravity, level pose
        expect.extend_from_slice(&pose); // q
        expect.extend_from_slice(&[0.0; 4]); // dq
        expect.extend_from_slice(&[0.0; 7]); // prev action
        expect.extend_from_slice(&[0.0, 0.0, 0.0, 0.0]); // omega, omega_bar
        expect.extend_from_slice(&[0.0, 1.0]); // phase features at 0
        assert_eq!(step.obs.len(), expect.len());
        for (a, b) in step.obs.iter().zip(expect.iter()) {
            assert_relative_eq!(*a, *b, epsilon = 1e-12);
        }
        // Privileged tail: v (2), CoM offset (2), 50 patch cells, params.
        let tail = &step.privileged[27..];
        assert_eq!(tail.len(), 2 + 2 + 50 + 4);
        assert_eq!(tail[0], 0.0);
        assert_eq!(tail[1], 0.0);
        let params = &tail[54..];
        assert_eq!(params, &SimParams::nominal().as_array());
    }

    #[test]
    fn rollouts_are_bit_identical_under_the_same_seed() {
        let run = || {
            let mut env = BipedEnv::new(
                EnvConfig::default(),
                TerrainClass::Uneven,
                3,
                42,
                7,
            )
            .unwrap();
            let mut log = Vec::new();
            for k in 0..120 {
                let a: Vec<f64> =
                    (0..7).map(|j| 0.2 * ((k * 7 + j) as f64 * 0.37).sin()).collect();
                let step = env.step(&a).unwrap();
                log.push((step.obs, step.reward, step.done));
                if step.done {
                    env.reset().unwrap();
                }
            }
            log
        };
        let a = run();
        let b = run();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.1.to_bits(), y.1.to_bits());
            assert_eq!(x.2, y.2);
            for (u, v) in x.0.iter().zip(y.0.iter()) {
                assert_eq!(u.to_bits(), v.to_bits());
            }
        }
    }

    #[test]
    fn randomization_draws_stay_inside_the_configured_ranges() {
        let cfg = EnvConfig {
            randomization: RandomizationConfig::default(),
            ..quiet_cfg()
        };
        let mut env = flat_env(cfg);
        let r = env.cfg.randomization.clone();
        let mut motor_sum = 0.0;
        let n = 10_000;
        for _ in 0..n {
            env.reset().unwrap();
            let p = env.params().clone();
            assert!(p.mass_scale >= r.mass_scale[0] && p.mass_scale <= r.mass_scale[1]);
            assert!(p.com_offset_x.abs() <= r.com_offset);
            assert!(
                p.motor_strength >= r.motor_strength[0]
                    && p.motor_strength <= r.motor_strength[1]
            );
            assert!(p.friction >= r.friction[0] && p.friction <= r.friction[1]);
            motor_sum += p.motor_strength;
        }
        let mean = motor_sum / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "motor strength mean {mean}");
    }

    #[test]
    fn standing_still_is_an_equilibrium_after_settling() {
        let mut env = flat_env(quiet_cfg());
        // Contact springs ring for a moment after the exact-touch spawn;
        // give them a settling window, then demand stillness.
        for _ in 0..150 {
            let step = env.step(&vec![0.0; 7]).unwrap();
            assert!(!step.done, "fell while settling");
        }
        let z0 = env.state().q[IZ];
        for _ in 0..50 {
            env.step(&vec![0.0; 7]).unwrap();
        }
        assert!(
            (env.state().q[IZ] - z0).abs() < 1e-3,
            "drifted {} m",
            (env.state().q[IZ] - z0).abs()
        );
    }

    #[test]
    fn pitch_and_height_terminate_the_episode() {
        let mut env = flat_env(quiet_cfg());
        env.state.q[ITH] = 1.2;
        let step = env.step(&vec![0.0; 7]).unwrap();
        assert!(step.done && !step.timeout);
        assert!(env.outcome().fell);

        env.reset().unwrap();
        env.state.q[IZ] = env.terrain.height_at(env.state.q[IX], 0.0)
            + 0.3 * env.cfg.dynamics.nominal_height();
        let step = env.step(&vec![0.0; 7]).unwrap();
        assert!(step.done && env.outcome().fell);
    }

    #[test]
    fn quiet_standing_times_out_without_falling() {
        let mut env = flat_env(quiet_cfg());
        let total = (env.cfg.episode_seconds / env.cfg.dynamics.dt_control()).round() as u32;
        let mut done_at = None;
        for k in 0..total + 10 {
            let step = env.step(&vec![0.0; 7]).unwrap();
            if step.done {
                done_at = Some((k + 1, step.timeout));
                break;
            }
        }
        let (steps, timeout) = done_at.expect("episode never ended");
        assert_eq!(steps, total);
        assert!(timeout, "standing robot should time out, not fall");
        let out = env.outcome();
        assert!(out.timeout && !out.fell);
        // Zero commanded velocity makes a quiet stand a tracking success.
        assert!(env.episode_success());
    }

    #[test]
    fn airborne_impulse_changes_velocity_by_the_commanded_amount() {
        let mut env = flat_env(quiet_cfg());
        // Lift the robot clear of the ground and inject a pure-x kick.
        env.state.q[IZ] += 3.0;
        env.pushes = vec![Push::Impulse { at: env.t + 1e-9, dv: [0.55, 0.0] }];
        env.next_push = 0;
        let vx0 = env.state.dq[IX];
        env.step(&vec![0.0; 7]).unwrap();
        let dv = env.state.dq[IX] - vx0;
        assert!((dv - 0.55).abs() / 0.55 < 0.05, "dv {dv}");
    }

    #[test]
    fn sustained_force_accelerates_the_torso() {
        let mut env = flat_env(quiet_cfg());
        env.state.q[IZ] += 3.0;
        env.pushes = vec![Push::Force {
            at: 0.0,
            until: 10.0,
            f: [44.0, 0.0],
        }];
        // Momentum theorem: airborne, the only horizontal external force
        // is the push, so the CoM x-velocity gains F·dt/M up to the O(h²)
        // Jacobian drift of the semi-implicit integrator.
        let model = env.model.clone();
        let px0 = model.kinematics(env.state()).com_vel[0];
        env.step(&vec![0.0; 7]).unwrap();
        let px1 = model.kinematics(env.state()).com_vel[0];
        let expect = 44.0 / env.cfg.dynamics.total_mass() * env.cfg.dynamics.dt_control();
        assert_relative_eq!(px1 - px0, expect, max_relative = 1e-4);
    }

    #[test]
    fn crossing_the_goal_sets_the_flag_without_ending_the_episode() {
        let cfg = EnvConfig {
            command: CommandConfig { fixed: Some(0.5), ..CommandConfig::default() },
            ..quiet_cfg()
        };
        let mut env = flat_env(cfg);
        env.state.q[IX] = env.terrain.goal()[0] + 0.1;
        let step = env.step(&vec![0.0; 7]).unwrap();
        assert!(env.outcome().goal_reached);
        assert!(!step.done);
        assert!(env.episode_success() || !env.outcome().timeout);
    }

    #[test]
    fn commands_resample_on_schedule_and_respect_the_fixed_override() {
        let mut cfg = quiet_cfg();
        cfg.command = CommandConfig {
            v_min: 0.0,
            v_max: 1.0,
            resample_seconds: 0.1,
            fixed: None,
        };
        let mut env = flat_env(cfg);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..40 {
            env.step(&vec![0.0; 7]).unwrap();
            let v = env.command()[0];
            assert!((0.0..=1.0).contains(&v));
            seen.insert(v.to_bits());
        }
        assert!(seen.len() > 3, "commands never resampled");

        let mut env = flat_env(EnvConfig {
            command: CommandConfig { fixed: Some(0.4), ..CommandConfig::default() },
            ..quiet_cfg()
        });
        for _ in 0..40 {
            env.step(&vec![0.0; 7]).unwrap();
            assert_eq!(env.command()[0], 0.4);
        }
    }

    #[test]
    fn sensor_noise_stays_inside_the_configured_bounds() {
        let mut noisy_cfg = quiet_cfg();
        noisy_cfg.noise = NoiseConfig { enabled: true, ..NoiseConfig::default() };
        let mut noisy = flat_env(noisy_cfg);
        let clean = flat_env(quiet_cfg());
        // Same spawn state; compare the two assembled observations.
        let a = noisy.reset().unwrap().obs;
        let b = clean.cfg.clone();
        let pose = b.dynamics.reference_pose;
        let nb = &noisy.cfg.noise;
        for j in 0..4 {
            assert!((a[6 + j] - pose[j]).abs() <= nb.q + 1e-12);
            assert!((a[10 + j] - 0.0).abs() <= nb.dq * noisy.cfg.scales.dq + 1e-12);
        }
        assert!((a[3] - 0.0).abs() <= nb.gravity + 1e-12);
        assert!((a[5] - (-1.0)).abs() <= nb.gravity + 1e-12);
        for k in 0..3 {
            assert!(a[21 + k].abs() <= nb.omega * noisy.cfg.scales.omega + 1e-12);
        }
    }

    #[test]
    fn full_mode_deltas_speed_the_clock_and_ablations_ignore_them() {
        let dt = EnvConfig::default().dynamics.dt_control();
        let mut full = flat_env(quiet_cfg());
        let mut action = vec![0.0; 7];
        action[4] = 1.0; // raw δ₀ → scaled 0.5, clamped 0.4
        full.step(&action).unwrap();
        let alpha = full.cfg.clock.alpha;
        assert_relative_eq!(full.clock().phi, (1.0 + alpha * 0.4) * dt, epsilon = 1e-12);

        let mut fixed = flat_env(EnvConfig { mode: GaitMode::FixedCycle, ..quiet_cfg() });
        fixed.step(&action).unwrap();
        assert_relative_eq!(fixed.clock().phi, dt, epsilon = 1e-12);

        let mut free = flat_env(EnvConfig { mode: GaitMode::ClockFree, ..quiet_cfg() });
        free.step(&vec![0.0; 4]).unwrap();
        assert_relative_eq!(free.clock().phi, dt, epsilon = 1e-12);
    }

    #[test]
    fn phase_features_in_the_observation_track_the_clock() {
        let mut env = flat_env(quiet_cfg());
        let step = env.step(&vec![0.0; 7]).unwrap();
        let feats = env.clock().phase_features();
        assert_eq!(&step.obs[25..27], &feats);
    }

    #[test]
    fn corrupted_state_raises_the_fault_flag() {
        let mut env = flat_env(quiet_cfg());
        env.state.q[IZ] = f64::NAN;
        let step = env.step(&vec![0.0; 7]).unwrap();
        assert!(step.done && step.fault);
        assert!(env.outcome().fault);
        assert!(!env.episode_success());
        // Recovery is a reset away.
        let step = env.reset().unwrap();
        assert!(step.obs.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn wrong_action_width_is_rejected() {
        let mut env = flat_env(quiet_cfg());
        assert!(env.step(&vec![0.0; 4]).is_err());
        assert!(env.step(&[0.0, f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn curriculum_promotes_and_demotes_on_the_windowed_rate() {
        let mut c = Curriculum::default();
        let mut level = 3;
        // Nine successes: still waiting for a full window.
        for _ in 0..9 {
            assert_eq!(c.record(true, level), None);
        }
        // Tenth fills the window at 100% → promote.
        if let Some(next) = c.record(true, level) {
            level = next;
        }
        assert_eq!(level, 4);
        // All failures → demote once the window refills.
        let mut changed = None;
        for _ in 0..10 {
            changed = c.record(false, level);
        }
        assert_eq!(changed, Some(3));
        // Top level saturates.
        let mut c = Curriculum::default();
        let mut lvl = 9;
        for _ in 0..10 {
            if let Some(next) = c.record(true, lvl) {
                lvl = next;
            }
        }
        assert_eq!(lvl, 9);
    }

    #[test]
    fn tracking_shortfall_fails_the_curriculum_success_test() {
        let out = EpisodeOutcome {
            fell: false,
            fault: false,
            timeout: true,
            goal_reached: false,
            distance: 2.0,
            commanded_distance: 6.0,
            steps: 1000,
        };
        // Needed 0.8·6 = 4.8 m.
        assert!(!out.success(8.0, 0.8));
        let good = EpisodeOutcome { distance: 5.0, ..out };
        assert!(good.success(8.0, 0.8));
        let fell = EpisodeOutcome { fell: true, distance: 9.0, goal_reached: true, ..out };
        assert!(!fell.success(8.0, 0.8));
    }
}
