//! The locomotion reward suite: thirty named terms combined as a weighted
//! sum `r_t = Σ r_i · w_i`.
//!
//! Terms fall into four groups: command tracking (exponential kernels),
//! posture and regularization penalties (squared magnitudes), limit
//! penalties (soft-threshold ReLUs), and contact-quality terms keyed to the
//! gait clock's stance mask. Every term is evaluated every step in a fixed
//! order; the planar model has no lateral, arm, or waist degrees of
//! freedom, so the four terms that measure them evaluate to zero and carry
//! a `degenerate_in_planar` flag rather than being dropped, keeping the
//! breakdown aligned with the published table.
//!
//! Sign convention: raw term values are nonnegative; penalties get their
//! sign entirely from negative weights, so a zero weight always disables a
//! term without flipping behavior.

use crate::sim::dynamics::{BipedState, ContactState, DynamicsConfig, ITH, IX, IZ, N_JOINTS};
use crate::terrain::TerrainField;
use serde::{Deserialize, Serialize};

/// Term identities, in evaluation (and summation) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(usize)]
pub enum Term {
    LinVelocityTracking = 0,
    AngVelocityTracking,
    LinVelocityZ,
    AngVelocityXy,
    Orientation,
    TorsoOrientation,
    JointAccelerations,
    JointPower,
    BodyHeight,
    FeetClearance,
    ActionRate,
    Smoothness,
    FeetStumble,
    Torques,
    JointVelocity,
    JointTrackingError,
    ArmJointDeviation,
    HipJointDeviation,
    WaistJointDeviation,
    JointPosLimits,
    JointVelLimits,
    TorqueLimits,
    NoFly,
    FeetLateralDistance,
    FeetSlip,
    FeetGroundParallel,
    FeetContactForce,
    FeetParallel,
    ContactMomentum,
    ContactPattern,
}

pub const N_TERMS: usize = 30;

pub const TERM_NAMES: [&str; N_TERMS] = [
    "lin_velocity_tracking",
    "ang_velocity_tracking",
    "lin_velocity_z",
    "ang_velocity_xy",
    "orientation",
    "torso_orientation",
    "joint_accelerations",
    "joint_power",
    "body_height",
    "feet_clearance",
    "action_rate",
    "smoothness",
    "feet_stumble",
    "torques",
    "joint_velocity",
    "joint_tracking_error",
    "arm_joint_deviation",
    "hip_joint_deviation",
    "waist_joint_deviation",
    "joint_pos_limits",
    "joint_vel_limits",
    "torque_limits",
    "no_fly",
    "feet_lateral_distance",
    "feet_slip",
    "feet_ground_parallel",
    "feet_contact_force",
    "feet_parallel",
    "contact_momentum",
    "contact_pattern",
];

/// Terms whose quantity does not exist in the sagittal-plane model (no
/// lateral foot placement, no arm or waist joints). They stay in the
/// breakdown at value 0 with their published weight.
pub const DEGENERATE_IN_PLANAR: [Term; 4] = [
    Term::ArmJointDeviation,
    Term::WaistJointDeviation,
    Term::FeetLateralDistance,
    Term::FeetParallel,
];

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// One weight per term, in `Term` order.
    pub weights: Vec<f64>,
    /// Kernel width of the velocity-tracking terms.
    pub sigma_velocity: f64,
    /// Kernel width of the torso-orientation term.
    pub sigma_orientation: f64,
    /// Kernel width of the body-height term.
    pub sigma_height: f64,
    /// Pelvis height above the feet the height term targets, meters.
    pub height_target: f64,
    /// Swing-foot apex target, meters above the terrain.
    pub clearance_target: f64,
    /// Contact force penalized above this, newtons.
    pub force_threshold: f64,
    /// Position/velocity/torque limits are penalized beyond this fraction
    /// of the hard range (the simulator clamps at the hard limits, which
    /// would make literal limit terms identically zero).
    pub soft_limit_factor: f64,
    /// Tangential-over-normal force ratio that counts as a stumble.
    pub stumble_ratio: f64,
    /// Half-extent of the virtual foot sole for the ground-parallel term.
    pub foot_half_length: f64,
    /// Lower bound on the joint-power denominator ‖v‖² + 0.2‖ω‖².
    pub power_floor: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            weights: TABLE_WEIGHTS.to_vec(),
            sigma_velocity: 0.25,
            sigma_orientation: 0.1,
            sigma_height: 0.01,
            height_target: DynamicsConfig::default().nominal_height(),
            clearance_target: 0.08,
            force_threshold: 350.0,
            soft_limit_factor: 0.9,
            stumble_ratio: 3.0,
            foot_half_length: 0.05,
            power_floor: 0.04,
        }
    }
}

/// Published weights, in `Term` order.
pub const TABLE_WEIGHTS: [f64; N_TERMS] = [
    3.0,      // lin velocity tracking
    3.0,      // ang velocity tracking
    -0.5,     // lin velocity z
    -0.025,   // ang velocity xy
    -1.25,    // orientation
    2.0,      // torso orientation
    -2.5e-7,  // joint accelerations
    -2.5e-5,  // joint power
    0.1,      // body height w.r.t. feet
    -0.25,    // feet clearance
    -0.01,    // action rate
    -0.01,    // smoothness
    -0.5,     // feet stumble
    -2.5e-6,  // torques
    -1e-4,    // joint velocity
    -0.25,    // joint tracking error
    -0.1,     // arm joint deviation
    -0.5,     // hip joint deviation
    -1.5,     // waist joint deviation
    -2.0,     // joint pos limits
    -0.1,     // joint vel limits
    -0.1,     // torque limits
    0.25,     // no fly
    1.0,      // feet lateral distance
    -0.05,    // feet slip
    -2.0,     // feet ground parallel
    -0.01,    // feet contact force
    -2.5,     // feet parallel
    -0.025,   // contact momentum
    1.0,      // contact pattern
];

impl RewardConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if self.weights.len() != N_TERMS {
            return Err(crate::Error::config(format!(
                "rewards.weights must have {} entries, got {}",
                N_TERMS,
                self.weights.len()
            )));
        }
        for (name, v) in [
            ("sigma_velocity", self.sigma_velocity),
            ("sigma_orientation", self.sigma_orientation),
            ("sigma_height", self.sigma_height),
            ("power_floor", self.power_floor),
        ] {
            if !(v > 0.0) {
                return Err(crate::Error::config(format!(
                    "rewards.{name} must be > 0, got {v}"
                )));
            }
        }
        if !(self.soft_limit_factor > 0.0 && self.soft_limit_factor <= 1.0) {
            return Err(crate::Error::config(format!(
                "rewards.soft_limit_factor must be in (0, 1], got {}",
                self.soft_limit_factor
            )));
        }
        Ok(())
    }
}

/// Everything one step's reward evaluation needs.
pub struct RewardInputs<'a> {
    pub state: &'a BipedState,
    /// Joint velocities one control step earlier (joint accelerations are
    /// differenced at the control rate).
    pub prev_joint_vels: [f64; N_JOINTS],
    /// Velocity command (forward, lateral, yaw rate); the planar model can
    /// realize only the first component.
    pub command: [f64; 3],
    /// Clamped joint torques applied this step.
    pub torques: [f64; N_JOINTS],
    /// PD position targets this step.
    pub targets: [f64; N_JOINTS],
    /// Hip and knee angles the deviation/tracking terms pull toward.
    pub default_pose: [f64; N_JOINTS],
    pub joint_lower: [f64; N_JOINTS],
    pub joint_upper: [f64; N_JOINTS],
    pub joint_vel_limit: f64,
    pub torque_limit: f64,
    pub kp: f64,
    pub action: &'a [f64],
    pub prev_action: &'a [f64],
    pub prev_prev_action: &'a [f64],
    pub contacts: &'a [ContactState; 2],
    /// Feet that entered contact on this control step.
    pub new_contact: [bool; 2],
    /// The gait clock's commanded stance mask.
    pub stance_mask: [bool; 2],
    pub terrain: &'a TerrainField,
    pub dt: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RewardBreakdown {
    /// Unweighted term values, in `Term` order.
    pub values: [f64; N_TERMS],
    pub weighted_total: f64,
}

impl RewardBreakdown {
    pub fn value(&self, term: Term) -> f64 {
        self.values[term as usize]
    }

    pub fn weighted(&self, term: Term, cfg: &RewardConfig) -> f64 {
        self.values[term as usize] * cfg.weights[term as usize]
    }

    pub fn csv_header() -> String {
        let mut s = String::from("weighted_total");
        for name in TERM_NAMES {
            s.push(',');
            s.push_str(name);
        }
        s
    }

    pub fn csv_row(&self) -> String {
        let mut s = format!("{:.9}", self.weighted_total);
        for v in self.values {
            s.push_str(&format!(",{v:.9}"));
        }
        s
    }
}

pub fn compute_rewards(inp: &RewardInputs, cfg: &RewardConfig) -> RewardBreakdown {
    let mut v = [0.0; N_TERMS];
    let s = inp.state;
    let q = s.joint_angles();
    let dq = s.joint_vels();
    let (vx, vz, pitch_rate) = (s.dq[IX], s.dq[IZ], s.dq[ITH]);
    let pitch = s.q[ITH];

    // Command tracking. The planar model has no lateral velocity or yaw, so
    // those command components compare against identically-zero measurements.
    let vel_err = (inp.command[0] - vx).powi(2) + inp.command[1].powi(2);
    v[Term::LinVelocityTracking as usize] = (-vel_err / cfg.sigma_velocity).exp();
    v[Term::AngVelocityTracking as usize] =
        (-inp.command[2].powi(2) / cfg.sigma_velocity).exp();

    // Base motion penalties.
    v[Term::LinVelocityZ as usize] = vz * vz;
    v[Term::AngVelocityXy as usize] = pitch_rate * pitch_rate;
    // Projected gravity's horizontal part in the body frame is -sin(pitch).
    let g_xy_sq = pitch.sin().powi(2);
    v[Term::Orientation as usize] = g_xy_sq;
    v[Term::TorsoOrientation as usize] = (-g_xy_sq / cfg.sigma_orientation).exp();

    // Joint regularizers.
    let mut acc_sq = 0.0;
    let mut power = 0.0;
    let mut vel_sq = 0.0;
    let mut torque_ratio_sq = 0.0;
    let mut tracking_sq = 0.0;
    for j in 0..N_JOINTS {
        let acc = (dq[j] - inp.prev_joint_vels[j]) / inp.dt;
        acc_sq += acc * acc;
        power += inp.torques[j].abs() * dq[j].abs();
        vel_sq += dq[j] * dq[j];
        let r = inp.torques[j] / inp.kp;
        torque_ratio_sq += r * r;
        let e = q[j] - inp.targets[j];
        tracking_sq += e * e;
    }
    v[Term::JointAccelerations as usize] = acc_sq;
    let speed_sq = (vx * vx + vz * vz + 0.2 * pitch_rate * pitch_rate).max(cfg.power_floor);
    v[Term::JointPower as usize] = power / speed_sq;
    v[Term::JointVelocity as usize] = vel_sq;
    v[Term::Torques as usize] = torque_ratio_sq;
    v[Term::JointTrackingError as usize] = tracking_sq;

    // Height above the feet, exponential kernel.
    let feet_z = 0.5 * (inp.contacts[0].foot_pos[1] + inp.contacts[1].foot_pos[1]);
    let height = s.q[IZ] - feet_z;
    v[Term::BodyHeight as usize] =
        (-(cfg.height_target - height).powi(2) / cfg.sigma_height).exp();

    // Swing-foot clearance: penalize low feet in proportion to how fast
    // they travel horizontally (stance feet move slowly and drop out).
    let mut clearance = 0.0;
    for c in inp.contacts.iter() {
        let above = c.foot_pos[1] - inp.terrain.height_at(c.foot_pos[0], 0.0);
        clearance += (cfg.clearance_target - above).powi(2) * c.foot_vel[0].abs();
    }
    v[Term::FeetClearance as usize] = clearance;

    // Action history penalties.
    let mut rate = 0.0;
    let mut smooth = 0.0;
    for i in 0..inp.action.len() {
        let d1 = inp.action[i] - inp.prev_action[i];
        rate += d1 * d1;
        let d2 = inp.action[i] - 2.0 * inp.prev_action[i] + inp.prev_prev_action[i];
        smooth += d2 * d2;
    }
    v[Term::ActionRate as usize] = rate;
    v[Term::Smoothness as usize] = smooth;

    // Contact-quality terms.
    let stumble = inp.contacts.iter().any(|c| {
        c.in_contact && c.force[0].abs() > cfg.stumble_ratio * c.force[1].max(0.0)
    });
    v[Term::FeetStumble as usize] = if stumble { 1.0 } else { 0.0 };

    let ground_feet = inp.contacts.iter().filter(|c| c.in_contact).count();
    v[Term::NoFly as usize] = if ground_feet == 1 { 1.0 } else { 0.0 };

    let mut slip = 0.0;
    for (c, &fresh) in inp.contacts.iter().zip(inp.new_contact.iter()) {
        if fresh {
            slip += (c.foot_vel[0].powi(2) + c.foot_vel[1].powi(2)).sqrt();
        }
    }
    v[Term::FeetSlip as usize] = slip;

    let mut parallel = 0.0;
    for c in inp.contacts.iter() {
        let h1 = inp.terrain.height_at(c.foot_pos[0] - cfg.foot_half_length, 0.0);
        let h2 = inp.terrain.height_at(c.foot_pos[0] + cfg.foot_half_length, 0.0);
        // Variance of the two sole samples.
        parallel += (h1 - h2).powi(2) / 4.0;
    }
    v[Term::FeetGroundParallel as usize] = parallel;

    let mut overforce = 0.0;
    let mut momentum = 0.0;
    for c in inp.contacts.iter() {
        overforce += (c.force[1] - cfg.force_threshold).max(0.0);
        momentum += (c.foot_vel[1] * c.force[1]).abs();
    }
    v[Term::FeetContactForce as usize] = overforce;
    v[Term::ContactMomentum as usize] = momentum;

    // Soft limit penalties (the simulator clamps at the hard limits, so
    // penalize approach beyond `soft_limit_factor` of each range).
    let mut pos_out = 0.0;
    let mut vel_out = 0.0;
    let mut torque_out = 0.0;
    for j in 0..N_JOINTS {
        let mid = 0.5 * (inp.joint_lower[j] + inp.joint_upper[j]);
        let half = 0.5 * (inp.joint_upper[j] - inp.joint_lower[j]) * cfg.soft_limit_factor;
        pos_out += (q[j] - (mid + half)).max(0.0) + ((mid - half) - q[j]).max(0.0);
        vel_out += (dq[j].abs() - cfg.soft_limit_factor * inp.joint_vel_limit).max(0.0);
        torque_out +=
            (inp.torques[j].abs() - cfg.soft_limit_factor * inp.torque_limit).max(0.0);
    }
    v[Term::JointPosLimits as usize] = pos_out;
    v[Term::JointVelLimits as usize] = vel_out;
    v[Term::TorqueLimits as usize] = torque_out;

    // Hip deviation from the default pose (knees are covered by tracking).
    let hip_dev = (q[0] - inp.default_pose[0]).powi(2) + (q[2] - inp.default_pose[2]).powi(2);
    v[Term::HipJointDeviation as usize] = hip_dev;

    // Gait-clock agreement: exp(-‖m_stance - c_actual‖²) over both feet.
    let mut mismatch = 0.0f64;
    for (c, &m) in inp.contacts.iter().zip(inp.stance_mask.iter()) {
        let actual = if c.in_contact { 1.0 } else { 0.0 };
        let mask = if m { 1.0 } else { 0.0 };
        mismatch += (mask - actual) * (mask - actual);
    }
    v[Term::ContactPattern as usize] = (-mismatch).exp();

    // Degenerate-in-planar terms stay at 0: ArmJointDeviation,
    // WaistJointDeviation, FeetLateralDistance, FeetParallel.

    let mut total = 0.0;
    for i in 0..N_TERMS {
        total += v[i] * cfg.weights[i];
    }
    RewardBreakdown { values: v, weighted_total: total }
}
