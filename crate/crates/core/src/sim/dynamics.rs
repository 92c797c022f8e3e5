//! Rigid-body dynamics of a planar five-link biped.
//!
//! The robot lives in the sagittal (x–z) plane: a torso and two legs, each a
//! thigh + shank pair with point feet. Generalized coordinates
//!
//! ```text
//! Q = [x, z, theta, hip_l, knee_l, hip_r, knee_r]
//! ```
//!
//! where (x, z) is the pelvis point (hip axis), `theta` the torso pitch
//! (positive = forward lean), and the four joint angles are relative. The
//! equations of motion are assembled from link Jacobians:
//!
//! ```text
//! M(Q) Q̈ = S·τ + Σ_c J_cᵀ F_c + F_ext + Σ_k m_k Jv_kᵀ (g − a_vp,k)
//! ```
//!
//! with `M = Σ_k m_k Jv_kᵀ Jv_k + I_k Jω_kᵀ Jω_k` and `a_vp,k = J̇v_k Q̇`
//! the velocity-product acceleration of link k's center of mass. Ground
//! interaction is a penalty contact: spring-damper normal force along the
//! local surface normal plus capped viscous friction. Integration is
//! semi-implicit Euler with several substeps per control step; joint limits
//! are hard-clamped with velocity zeroing.

use crate::error::{Error, Result};
use crate::terrain::TerrainField;
use serde::{Deserialize, Serialize};

pub const NQ: usize = 7;
pub const N_JOINTS: usize = 4;

/// Index helpers into the generalized coordinate vector.
pub const IX: usize = 0;
pub const IZ: usize = 1;
pub const ITH: usize = 2;
pub const IHL: usize = 3;
pub const IKL: usize = 4;
pub const IHR: usize = 5;
pub const IKR: usize = 6;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsConfig {
    pub torso_mass: f64,
    pub torso_inertia: f64,
    pub thigh_mass: f64,
    pub shank_mass: f64,
    /// Thigh and shank are the same length.
    pub segment_length: f64,
    pub gravity: f64,
    /// PD gains applied at every joint, torque = kp (q* - q) - kd q̇.
    /// kp must clear the gravitational destabilizing stiffness of a loaded
    /// leg (≈ half the weight times the segment length, ~80 N·m/rad here),
    /// or the joints buckle under the robot's own weight; the default keeps
    /// a ~4x margin.
    pub kp: f64,
    pub kd: f64,
    pub torque_limit: f64,
    pub hip_limit: f64,
    pub knee_limits: [f64; 2],
    /// Used only by the soft velocity-limit penalty, not enforced here.
    pub joint_vel_limit: f64,
    /// Physics substep, seconds; `substeps` of these per control step.
    pub dt_sim: f64,
    pub substeps: usize,
    /// Penalty contact: N = k δ + c (-v_n), clamped to N ≥ 0.
    pub contact_stiffness: f64,
    pub contact_damping: f64,
    /// Stick-slip friction: while anchored, T = -k_t d - c_t v_t for
    /// tangential displacement d from the anchor, saturated to the cone
    /// |T| ≤ μN (the anchor drags along the surface during slip).
    pub tangent_stiffness: f64,
    pub tangent_damping: f64,
    /// A foot counts as "in contact" above this normal force, newtons.
    pub contact_force_threshold: f64,
    /// Joint targets the PD loop holds at reset, [hip_l, knee_l, hip_r,
    /// knee_r]. The default staggers the legs fore/aft: a point-foot biped
    /// in a mirrored pose balances on a single support point and tips like
    /// an inverted pendulum, while the stagger spans a support polygon the
    /// robot can rest inside with zero action.
    pub reference_pose: [f64; 4],
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig {
            torso_mass: 30.0,
            torso_inertia: 0.8,
            thigh_mass: 3.0,
            shank_mass: 2.0,
            segment_length: 0.4,
            gravity: 9.81,
            kp: 500.0,
            kd: 25.0,
            torque_limit: 120.0,
            hip_limit: 1.2,
            knee_limits: [-2.2, -0.02],
            joint_vel_limit: 15.0,
            // The explicit damping forces demand c·dt/m_eff < 2 at the
            // smallest reflected mass a foot presents (~0.6 kg along x,
            // ~2.3 kg along z in the reference stance); 1 ms holds every
            // damping term below a factor of 0.7 while the control step
            // stays dt_sim × substeps = 20 ms.
            dt_sim: 0.001,
            substeps: 20,
            contact_stiffness: 2.0e4,
            // ~0.5 damping ratio per foot at half the robot's mass; much
            // lower and the touchdown bounce unloads a foot long enough
            // for the unactuated pitch to escape its stability well.
            contact_damping: 600.0,
            tangent_stiffness: 2.0e4,
            tangent_damping: 400.0,
            contact_force_threshold: 5.0,
            // Both legs drop the pelvis by L(cos 0.4 + cos 0.1), so the
            // feet land level, 0.23 m apart.
            reference_pose: [0.4, -0.5, 0.1, -0.5],
        }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("torso_mass", self.torso_mass),
            ("torso_inertia", self.torso_inertia),
            ("thigh_mass", self.thigh_mass),
            ("shank_mass", self.shank_mass),
            ("segment_length", self.segment_length),
            ("kp", self.kp),
            ("torque_limit", self.torque_limit),
            ("dt_sim", self.dt_sim),
            ("contact_stiffness", self.contact_stiffness),
            ("tangent_stiffness", self.tangent_stiffness),
        ] {
            if !(v > 0.0) {
                return Err(Error::config(format!("dynamics.{name} must be > 0, got {v}")));
            }
        }
        if self.substeps == 0 {
            return Err(Error::config("dynamics.substeps must be >= 1".to_string()));
        }
        if self.knee_limits[0] >= self.knee_limits[1] {
            return Err(Error::config(format!(
                "dynamics.knee_limits must be ordered: {:?}",
                self.knee_limits
            )));
        }
        Ok(())
    }

    pub fn total_mass(&self) -> f64 {
        self.torso_mass + 2.0 * (self.thigh_mass + self.shank_mass)
    }

    /// Pelvis height above the lowest foot in the reference pose on flat
    /// ground (spawning at this height puts that foot exactly on the
    /// surface).
    pub fn nominal_height(&self) -> f64 {
        let [hl, kl, hr, kr] = self.reference_pose;
        let drop = |hip: f64, knee: f64| self.segment_length * (hip.cos() + (hip + knee).cos());
        drop(hl, kl).max(drop(hr, kr))
    }

    /// Control-step duration (substeps × dt_sim).
    pub fn dt_control(&self) -> f64 {
        self.dt_sim * self.substeps as f64
    }

    pub fn joint_lower(&self) -> [f64; N_JOINTS] {
        [-self.hip_limit, self.knee_limits[0], -self.hip_limit, self.knee_limits[0]]
    }

    pub fn joint_upper(&self) -> [f64; N_JOINTS] {
        [self.hip_limit, self.knee_limits[1], self.hip_limit, self.knee_limits[1]]
    }
}

/// Episode-sampled physical perturbations (domain randomization).
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct SimParams {
    /// Torso mass multiplier.
    pub mass_scale: f64,
    /// Torso center-of-mass shift along the body x axis, meters.
    pub com_offset_x: f64,
    /// PD torque multiplier.
    pub motor_strength: f64,
    /// Contact friction coefficient.
    pub friction: f64,
}

impl SimParams {
    pub fn nominal() -> SimParams {
        SimParams { mass_scale: 1.0, com_offset_x: 0.0, motor_strength: 1.0, friction: 0.8 }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.mass_scale, self.com_offset_x, self.motor_strength, self.friction]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BipedState {
    pub q: [f64; NQ],
    pub dq: [f64; NQ],
    /// Friction anchors, one per foot: the surface point the foot is
    /// elastically stuck to while the tangential force fits inside the
    /// friction cone. None while airborne. Without an anchor the ground
    /// only damps sliding and a standing robot creeps indefinitely.
    pub anchors: [Option<[f64; 2]>; 2],
}

impl BipedState {
    /// Reference pose at pelvis position (x, z), at rest.
    pub fn reference(cfg: &DynamicsConfig, x: f64, z: f64) -> BipedState {
        let [hl, kl, hr, kr] = cfg.reference_pose;
        BipedState {
            q: [x, z, 0.0, hl, kl, hr, kr],
            dq: [0.0; NQ],
            anchors: [None; 2],
        }
    }

    pub fn joint_angles(&self) -> [f64; N_JOINTS] {
        [self.q[IHL], self.q[IKL], self.q[IHR], self.q[IKR]]
    }

    pub fn joint_vels(&self) -> [f64; N_JOINTS] {
        [self.dq[IHL], self.dq[IKL], self.dq[IHR], self.dq[IKR]]
    }

    pub fn ensure_finite(&self) -> Result<()> {
        if self.q.iter().chain(self.dq.iter()).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::numeric("non-finite simulator state".to_string()))
        }
    }
}

/// A material point rigidly attached to the mechanism: world position,
/// velocity, its 2×NQ Jacobian, and the velocity-product acceleration
/// `J̇ Q̇` (the acceleration the point would have with Q̈ = 0).
#[derive(Debug, Clone, Copy)]
pub struct BodyPoint {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub jac: [[f64; NQ]; 2],
    pub vp_acc: [f64; 2],
}

impl BodyPoint {
    fn at_pelvis(state: &BipedState) -> BodyPoint {
        let mut jac = [[0.0; NQ]; 2];
        jac[0][IX] = 1.0;
        jac[1][IZ] = 1.0;
        BodyPoint {
            pos: [state.q[IX], state.q[IZ]],
            vel: [state.dq[IX], state.dq[IZ]],
            jac,
            vp_acc: [0.0; 2],
        }
    }

    /// Append a segment of length `len` at absolute angle `a = Σ Q[angles]`,
    /// pointing along dir(a) = (sin a, -cos a).
    fn extend(&self, len: f64, angles: &[usize], state: &BipedState) -> BodyPoint {
        let a: f64 = angles.iter().map(|&i| state.q[i]).sum();
        let da: f64 = angles.iter().map(|&i| state.dq[i]).sum();
        let dir = [a.sin(), -a.cos()];
        let perp = [a.cos(), a.sin()]; // d dir / da
        let mut out = *self;
        for ax in 0..2 {
            out.pos[ax] += len * dir[ax];
            out.vel[ax] += len * perp[ax] * da;
            for &i in angles {
                out.jac[ax][i] += len * perp[ax];
            }
            // d/dt perp = -dir · ȧ
            out.vp_acc[ax] += -len * dir[ax] * da * da;
        }
        out
    }
}

/// All the per-step kinematic quantities the dynamics and the observation
/// builders need, computed in one pass.
#[derive(Debug, Clone)]
pub struct Kinematics {
    /// Center-of-mass points: torso, thigh L, shank L, thigh R, shank R.
    pub link_com: [BodyPoint; 5],
    pub link_mass: [f64; 5],
    /// Point feet: left, right.
    pub feet: [BodyPoint; 2],
    /// Whole-body center of mass (world frame).
    pub com: [f64; 2],
    pub com_vel: [f64; 2],
}

/// The angle-coordinate sets whose rates sum to each link's angular
/// velocity; the angular Jacobians are constant so they contribute no
/// velocity-product terms.
const OMEGA_SETS: [&[usize]; 5] = [
    &[ITH],
    &[ITH, IHL],
    &[ITH, IHL, IKL],
    &[ITH, IHR],
    &[ITH, IHR, IKR],
];

/// One foot's contact snapshot after a step.
#[derive(Debug, Clone, Copy, Default)]
pub struct ContactState {
    /// World-frame contact force (Fx, Fz), newtons. Zero when airborne.
    pub force: [f64; 2],
    /// Force component along the surface normal.
    pub normal_force: f64,
    /// Force component along the surface tangent.
    pub tangent_force: f64,
    pub in_contact: bool,
    /// Penetration depth along the normal, ≥ 0 when touching.
    pub penetration: f64,
    pub foot_pos: [f64; 2],
    pub foot_vel: [f64; 2],
}

/// What a control step reports back for reward and observation assembly.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub contacts: [ContactState; 2],
    /// Clamped joint torques averaged over the substeps.
    pub mean_torques: [f64; N_JOINTS],
}

#[derive(Debug, Clone)]
pub struct DynamicsModel {
    pub cfg: DynamicsConfig,
    pub params: SimParams,
}

impl DynamicsModel {
    pub fn new(cfg: DynamicsConfig, params: SimParams) -> Result<DynamicsModel> {
        cfg.validate()?;
        Ok(DynamicsModel { cfg, params })
    }

    fn masses(&self) -> [f64; 5] {
        let c = &self.cfg;
        [
            c.torso_mass * self.params.mass_scale,
            c.thigh_mass,
            c.shank_mass,
            c.thigh_mass,
            c.shank_mass,
        ]
    }

    fn inertias(&self) -> [f64; 5] {
        let c = &self.cfg;
        // Thin-rod inertia about the segment midpoint.
        let rod = |m: f64| m * c.segment_length * c.segment_length / 12.0;
        [
            c.torso_inertia * self.params.mass_scale,
            rod(c.thigh_mass),
            rod(c.shank_mass),
            rod(c.thigh_mass),
            rod(c.shank_mass),
        ]
    }

    pub fn kinematics(&self, state: &BipedState) -> Kinematics {
        let l = self.cfg.segment_length;
        let pelvis = BodyPoint::at_pelvis(state);

        // Torso CoM sits at the pelvis plus the randomized body-frame x
        // offset; body x in world is perp(theta) = (cos θ, sin θ), which is
        // dir rotated a quarter turn, so reuse `extend` with a -π/2 shift
        // via an explicit construction instead.
        let torso = {
            let cx = self.params.com_offset_x;
            let th = state.q[ITH];
            let dth = state.dq[ITH];
            let mut p = pelvis;
            p.pos[0] += cx * th.cos();
            p.pos[1] += cx * th.sin();
            p.vel[0] += -cx * th.sin() * dth;
            p.vel[1] += cx * th.cos() * dth;
            p.jac[0][ITH] += -cx * th.sin();
            p.jac[1][ITH] += cx * th.cos();
            p.vp_acc[0] += -cx * th.cos() * dth * dth;
            p.vp_acc[1] += -cx * th.sin() * dth * dth;
            p
        };

        let thigh_l = pelvis.extend(l / 2.0, &[ITH, IHL], state);
        let knee_l = pelvis.extend(l, &[ITH, IHL], state);
        let shank_l = knee_l.extend(l / 2.0, &[ITH, IHL, IKL], state);
        let foot_l = knee_l.extend(l, &[ITH, IHL, IKL], state);

        let thigh_r = pelvis.extend(l / 2.0, &[ITH, IHR], state);
        let knee_r = pelvis.extend(l, &[ITH, IHR], state);
        let shank_r = knee_r.extend(l / 2.0, &[ITH, IHR, IKR], state);
        let foot_r = knee_r.extend(l, &[ITH, IHR, IKR], state);

        let link_com = [torso, thigh_l, shank_l, thigh_r, shank_r];
        let link_mass = self.masses();
        let total: f64 = link_mass.iter().sum();
        let mut com = [0.0; 2];
        let mut com_vel = [0.0; 2];
        for (p, m) in link_com.iter().zip(link_mass.iter()) {
            for ax in 0..2 {
                com[ax] += m * p.pos[ax] / total;
                com_vel[ax] += m * p.vel[ax] / total;
            }
        }
        Kinematics { link_com, link_mass, feet: [foot_l, foot_r], com, com_vel }
    }

    /// Assemble the joint-space mass matrix from the link Jacobians.
    pub fn mass_matrix(&self, kin: &Kinematics) -> [[f64; NQ]; NQ] {
        let mut m = [[0.0; NQ]; NQ];
        let inertias = self.inertias();
        for (k, p) in kin.link_com.iter().enumerate() {
            let mk = kin.link_mass[k];
            for ax in 0..2 {
                let row = &p.jac[ax];
                for i in 0..NQ {
                    if row[i] == 0.0 {
                        continue;
                    }
                    for j in 0..NQ {
                        m[i][j] += mk * row[i] * row[j];
                    }
                }
            }
            for &i in OMEGA_SETS[k] {
                for &j in OMEGA_SETS[k] {
                    m[i][j] += inertias[k];
                }
            }
        }
        m
    }

    /// PD joint torques for the given targets, scaled by motor strength and
    /// hard-clamped to the actuator limit.
    pub fn pd_torques(&self, state: &BipedState, targets: &[f64; N_JOINTS]) -> [f64; N_JOINTS] {
        let q = state.joint_angles();
        let dq = state.joint_vels();
        let mut tau = [0.0; N_JOINTS];
        for j in 0..N_JOINTS {
            let raw = self.cfg.kp * (targets[j] - q[j]) - self.cfg.kd * dq[j];
            tau[j] = (raw * self.params.motor_strength)
                .clamp(-self.cfg.torque_limit, self.cfg.torque_limit);
        }
        tau
    }

    /// Penalty contact force for one foot against the terrain, without a
    /// friction anchor: the tangential force is purely viscous. The
    /// simulation loop threads per-foot anchors through
    /// [`DynamicsModel::contact_force_anchored`] instead.
    pub fn contact_force(&self, terrain: &TerrainField, foot: &BodyPoint) -> ContactState {
        self.contact_force_anchored(terrain, foot, None).0
    }

    /// Penalty contact with stick-slip friction. While penetrating, the
    /// foot is elastically tied to `anchor` (its first-touch position when
    /// None): T = -k_t d - c_t v_t for the tangential displacement d. If T
    /// fits inside the friction cone the foot sticks and keeps its anchor;
    /// otherwise T saturates at ±μN and the anchor is dragged to where the
    /// spring alone carries the saturated force. Returns the force and the
    /// updated anchor (None once contact breaks).
    pub fn contact_force_anchored(
        &self,
        terrain: &TerrainField,
        foot: &BodyPoint,
        anchor: Option<[f64; 2]>,
    ) -> (ContactState, Option<[f64; 2]>) {
        let [x, z] = foot.pos;
        let h = terrain.height_at(x, 0.0);
        let s = terrain.slope_x_at(x, 0.0);
        let inv = 1.0 / (1.0 + s * s).sqrt();
        let normal = [-s * inv, inv];
        let tangent = [inv, s * inv];
        let penetration = (h - z) * normal[1];
        if penetration <= 0.0 {
            let state = ContactState {
                foot_pos: foot.pos,
                foot_vel: foot.vel,
                ..ContactState::default()
            };
            return (state, None);
        }
        let v_n = foot.vel[0] * normal[0] + foot.vel[1] * normal[1];
        let v_t = foot.vel[0] * tangent[0] + foot.vel[1] * tangent[1];
        let n_force = (self.cfg.contact_stiffness * penetration
            + self.cfg.contact_damping * (-v_n))
            .max(0.0);
        let cap = self.params.friction * n_force;
        let a = anchor.unwrap_or(foot.pos);
        let d = (foot.pos[0] - a[0]) * tangent[0] + (foot.pos[1] - a[1]) * tangent[1];
        let raw = -self.cfg.tangent_stiffness * d - self.cfg.tangent_damping * v_t;
        let (t_force, new_anchor) = if raw.abs() <= cap {
            (raw, Some(a))
        } else {
            let t = raw.clamp(-cap, cap);
            let d_slip = -t / self.cfg.tangent_stiffness;
            (
                t,
                Some([
                    foot.pos[0] - d_slip * tangent[0],
                    foot.pos[1] - d_slip * tangent[1],
                ]),
            )
        };
        let state = ContactState {
            force: [
                n_force * normal[0] + t_force * tangent[0],
                n_force * normal[1] + t_force * tangent[1],
            ],
            normal_force: n_force,
            tangent_force: t_force,
            in_contact: n_force > self.cfg.contact_force_threshold,
            penetration,
            foot_pos: foot.pos,
            foot_vel: foot.vel,
        };
        (state, new_anchor)
    }

    /// One semi-implicit Euler substep. `ext_force` is a world-frame force
    /// on the pelvis (used for push disturbances).
    pub fn substep(
        &self,
        state: &mut BipedState,
        targets: &[f64; N_JOINTS],
        terrain: &TerrainField,
        ext_force: [f64; 2],
    ) -> Result<([ContactState; 2], [f64; N_JOINTS])> {
        state.ensure_finite()?;
        let kin = self.kinematics(state);
        let m = self.mass_matrix(&kin);
        let tau = self.pd_torques(state, targets);
        let (c0, a0) = self.contact_force_anchored(terrain, &kin.feet[0], state.anchors[0]);
        let (c1, a1) = self.contact_force_anchored(terrain, &kin.feet[1], state.anchors[1]);
        state.anchors = [a0, a1];
        let contacts = [c0, c1];

        let g = [0.0, -self.cfg.gravity];
        let mut rhs = [0.0; NQ];
        // Gravity and velocity-product bias through each link CoM.
        for (k, p) in kin.link_com.iter().enumerate() {
            let mk = kin.link_mass[k];
            for ax in 0..2 {
                let f = mk * (g[ax] - p.vp_acc[ax]);
                if f == 0.0 {
                    continue;
                }
                for i in 0..NQ {
                    rhs[i] += p.jac[ax][i] * f;
                }
            }
        }
        // Joint torques enter their own coordinates directly (relative
        // angles make the parent reaction implicit).
        rhs[IHL] += tau[0];
        rhs[IKL] += tau[1];
        rhs[IHR] += tau[2];
        rhs[IKR] += tau[3];
        // Contact forces through the foot Jacobians.
        for (c, foot) in contacts.iter().zip(kin.feet.iter()) {
            for ax in 0..2 {
                if c.force[ax] == 0.0 {
                    continue;
                }
                for i in 0..NQ {
                    rhs[i] += foot.jac[ax][i] * c.force[ax];
                }
            }
        }
        rhs[IX] += ext_force[0];
        rhs[IZ] += ext_force[1];

        let ddq = solve_spd(&m, &rhs)?;
        let dt = self.cfg.dt_sim;
        for i in 0..NQ {
            state.dq[i] += ddq[i] * dt;
        }
        for i in 0..NQ {
            state.q[i] += state.dq[i] * dt;
        }
        self.clamp_joint_limits(state);
        state.ensure_finite()?;
        Ok((contacts, tau))
    }

    /// Hard joint-range enforcement: clamp the angle and kill the velocity
    /// that was driving it outward.
    fn clamp_joint_limits(&self, state: &mut BipedState) {
        let lo = self.cfg.joint_lower();
        let hi = self.cfg.joint_upper();
        for (j, &i) in [IHL, IKL, IHR, IKR].iter().enumerate() {
            if state.q[i] < lo[j] {
                state.q[i] = lo[j];
                state.dq[i] = state.dq[i].max(0.0);
            } else if state.q[i] > hi[j] {
                state.q[i] = hi[j];
                state.dq[i] = state.dq[i].min(0.0);
            }
        }
    }

    /// One control step: `substeps` physics substeps under a held target.
    pub fn step(
        &self,
        state: &mut BipedState,
        targets: &[f64; N_JOINTS],
        terrain: &TerrainField,
        ext_force: [f64; 2],
    ) -> Result<StepOutcome> {
        let mut mean_tau = [0.0; N_JOINTS];
        let mut last_contacts = [ContactState::default(); 2];
        for _ in 0..self.cfg.substeps {
            let (contacts, tau) = self.substep(state, targets, terrain, ext_force)?;
            for j in 0..N_JOINTS {
                mean_tau[j] += tau[j] / self.cfg.substeps as f64;
            }
            last_contacts = contacts;
        }
        // Refresh the contact snapshot at the post-step state so rewards and
        // observations see forces consistent with the reported state.
        let kin = self.kinematics(state);
        for (slot, foot) in last_contacts.iter_mut().zip(kin.feet.iter()) {
            *slot = self.contact_force(terrain, foot);
        }
        Ok(StepOutcome { contacts: last_contacts, mean_torques: mean_tau })
    }
}

/// Solve `M x = b` for symmetric positive-definite M via Cholesky.
pub fn solve_spd(m: &[[f64; NQ]; NQ], b: &[f64; NQ]) -> Result<[f64; NQ]> {
    // Lower-triangular factor L with M = L Lᵀ.
    let mut l = [[0.0; NQ]; NQ];
    for i in 0..NQ {
        for j in 0..=i {
            let mut s = m[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(s > 0.0) {
                    return Err(Error::numeric(format!(
                        "mass matrix not positive definite (pivot {s:.3e} at {i})"
                    )));
                }
                l[i][j] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    // Forward then back substitution.
    let mut y = [0.0; NQ];
    for i in 0..NQ {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    let mut x = [0.0; NQ];
    for i in (0..NQ).rev() {
        let mut s = y[i];
        for k in i + 1..NQ {
            s -= l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    Ok(x)
}
