//! Policy networks: recurrent actor, privileged recurrent critic with a
//! convolutional terrain encoder, and the contrastive projection heads.
//!
//! The actor sees only proprioception and produces a diagonal-Gaussian
//! action split into joint-target increments and gait-clock deltas. The
//! critic additionally receives the privileged state and a body-relative
//! global height map, encoded by a small conv stack into a 32-feature
//! vector `u_t` that is fused with the critic's recurrent output `m_t^c`
//! into `z_t = concat(m_t^c, u_t)` before the value head. The contrastive
//! heads project the actor's recurrent output (source) and the pair
//! `(stop_grad(u_t), s_t)` (target) into L2-normalized embeddings.
//!
//! Every forward exists in two forms that are bit-identical: an eager one
//! for rollouts and a taped one for gradient computation.

use crate::error::{Error, Result};
use crate::tensor::init::fan_in_uniform;
use crate::tensor::rnn::{gru_cell, gru_step, GruNodes, GruParams};
use crate::tensor::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct NetDims {
    /// Proprioceptive observation width.
    pub obs: usize,
    /// Privileged (critic) observation width.
    pub privileged: usize,
    /// Action width: `joints` target increments plus any clock deltas.
    pub action: usize,
    pub joints: usize,
    /// Recurrent hidden width for both actor and critic.
    pub hidden: usize,
    /// Global height-map patch shape fed to the critic.
    pub map_rows: usize,
    pub map_cols: usize,
}

impl Default for NetDims {
    fn default() -> Self {
        NetDims {
            obs: 27,
            privileged: 85,
            action: 7,
            joints: 4,
            hidden: 256,
            map_rows: 17,
            map_cols: 11,
        }
    }
}

/// Conv encoder geometry (filters and strides are fixed; the output width
/// follows from the patch shape).
const CONV1_CH: usize = 8;
const CONV2_CH: usize = 16;
const KSIZE: usize = 3;
const CONV2_STRIDE: usize = 2;
/// Terrain feature width u_t.
pub const TERRAIN_FEATURES: usize = 32;
/// Contrastive embedding width.
pub const EMBED_DIM: usize = 256;
const L2_EPS: f64 = 1e-12;

impl NetDims {
    pub fn validate(&self) -> Result<()> {
        if self.obs == 0 || self.privileged < self.obs || self.hidden == 0 {
            return Err(Error::config(format!(
                "net dims inconsistent: obs {}, privileged {}, hidden {}",
                self.obs, self.privileged, self.hidden
            )));
        }
        if self.action < self.joints || self.joints == 0 {
            return Err(Error::config(format!(
                "action width {} must cover the {} joint targets",
                self.action, self.joints
            )));
        }
        if self.map_rows < KSIZE + 2 || self.map_cols < KSIZE + 2 {
            return Err(Error::config(format!(
                "terrain map {}x{} too small for the conv stack",
                self.map_rows, self.map_cols
            )));
        }
        Ok(())
    }

    pub fn clock_deltas(&self) -> usize {
        self.action - self.joints
    }

    /// Flattened conv output width for the configured patch shape.
    pub fn conv_flat(&self) -> usize {
        let h1 = self.map_rows - KSIZE + 1;
        let w1 = self.map_cols - KSIZE + 1;
        let h2 = (h1 - KSIZE) / CONV2_STRIDE + 1;
        let w2 = (w1 - KSIZE) / CONV2_STRIDE + 1;
        CONV2_CH * h2 * w2
    }

    /// Fused feature width z_t = hidden + terrain features.
    pub fn fused(&self) -> usize {
        self.hidden + TERRAIN_FEATURES
    }
}

/// A dense layer `y = x W + b`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: Tensor,
    pub b: Tensor,
}

impl Dense {
    pub fn init(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Dense {
        Dense {
            w: fan_in_uniform(input, output, rng),
            b: Tensor::zeros(&[output]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.w)?.add_row(&self.b)
    }

    fn visit(&self, name: &str, f: &mut impl FnMut(&str, &Tensor)) {
        f(&format!("{name}.w"), &self.w);
        f(&format!("{name}.b"), &self.b);
    }

    fn visit_mut(&mut self, name: &str, f: &mut impl FnMut(&str, &mut Tensor)) {
        f(&format!("{name}.w"), &mut self.w);
        f(&format!("{name}.b"), &mut self.b);
    }
}

/// Tape-registered dense layer.
#[derive(Debug, Clone, Copy)]
pub struct DenseNodes {
    pub w: NodeId,
    pub b: NodeId,
}

impl DenseNodes {
    pub fn register(tape: &mut Tape, d: &Dense) -> DenseNodes {
        DenseNodes {
            w: tape.param(d.w.clone()),
            b: tape.param(d.b.clone()),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let y = tape.matmul(x, self.w)?;
        tape.add_row(y, self.b)
    }
}

// ---------------------------------------------------------------------------
// Actor
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ActorNet {
    pub gru: GruParams,
    pub fc1: Dense,
    pub fc2: Dense,
    /// Per-dimension log standard deviation (state-independent).
    pub log_std: Tensor,
    pub dims: NetDims,
}

impl ActorNet {
    pub fn init(dims: NetDims, rng: &mut ChaCha8Rng) -> Result<ActorNet> {
        dims.validate()?;
        let gru = GruParams::init(dims.obs, dims.hidden, rng);
        let fc1 = Dense::init(dims.hidden, 128, rng);
        let fc2 = Dense::init(128, dims.action, rng);
        // Wider exploration on joint targets than on the clock deltas.
        let mut std0 = vec![0.4f64.ln(); dims.joints];
        std0.extend(vec![0.1f64.ln(); dims.clock_deltas()]);
        let log_std = Tensor::from_vec(&[dims.action], std0)?;
        Ok(ActorNet { gru, fc1, fc2, log_std, dims })
    }

    /// One recurrent step: (mean, new hidden). The new hidden doubles as
    /// `m_t^a`, the latent consumed by the contrastive source head.
    pub fn forward(&self, obs: &Tensor, hidden: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_obs(obs)?;
        let m_a = gru_cell(&self.gru, obs, hidden)?;
        let x = self.fc1.forward(&m_a)?.tanh()?;
        let mean = self.fc2.forward(&x)?;
        Ok((mean, m_a))
    }

    fn check_obs(&self, obs: &Tensor) -> Result<()> {
        let w = obs.cols();
        if w != self.dims.obs {
            return Err(Error::config(format!(
                "actor expected obs width {}, got {}",
                self.dims.obs, w
            )));
        }
        Ok(())
    }

    pub fn visit(&self, f: &mut impl FnMut(&str, &Tensor)) {
        self.gru.visit(&mut |n, t| f(&format!("gru.{n}"), t));
        self.fc1.visit("fc1", f);
        self.fc2.visit("fc2", f);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&str, &mut Tensor)) {
        self.gru.visit_mut(&mut |n, t| f(&format!("gru.{n}"), t));
        self.fc1.visit_mut("fc1", f);
        self.fc2.visit_mut("fc2", f);
    }
}

/// Actor registered on a tape for gradient computation.
pub struct ActorTape {
    pub gru: GruNodes,
    pub fc1: DenseNodes,
    pub fc2: DenseNodes,
    pub log_std: NodeId,
}

impl ActorTape {
    pub fn register(tape: &mut Tape, net: &ActorNet) -> ActorTape {
        ActorTape {
            gru: GruNodes::register(tape, &net.gru),
            fc1: DenseNodes::register(tape, &net.fc1),
            fc2: DenseNodes::register(tape, &net.fc2),
            log_std: tape.param(net.log_std.clone()),
        }
    }

    /// Mirrors `ActorNet::forward` op-for-op (bit-identical values).
    pub fn step(&self, tape: &mut Tape, obs: NodeId, hidden: NodeId) -> Result<(NodeId, NodeId)> {
        let m_a = gru_step(tape, &self.gru, obs, hidden)?;
        let x = self.fc1.forward(tape, m_a)?;
        let x = tape.tanh(x)?;
        let mean = self.fc2.forward(tape, x)?;
        Ok((mean, m_a))
    }

    /// Collect this net's parameter nodes in visitation order.
    pub fn param_nodes(&self) -> Vec<NodeId> {
        let mut v = self.gru.param_nodes();
        v.extend([self.fc1.w, self.fc1.b, self.fc2.w, self.fc2.b, self.log_std]);
        v
    }
}

// ---------------------------------------------------------------------------
// Critic
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct CriticNet {
    pub gru: GruParams,
    /// Conv stack: kernels [F, C, 3, 3] with per-channel biases.
    pub conv1_k: Tensor,
    pub conv1_b: Tensor,
    pub conv2_k: Tensor,
    pub conv2_b: Tensor,
    pub enc: Dense,
    pub value: Dense,
    pub dims: NetDims,
}

impl CriticNet {
    pub fn init(dims: NetDims, rng: &mut ChaCha8Rng) -> Result<CriticNet> {
        dims.validate()?;
        let gru = GruParams::init(dims.privileged, dims.hidden, rng);
        // Fan-in init reshaped into conv kernel layout.
        let conv1_k = fan_in_uniform(KSIZE * KSIZE, CONV1_CH, rng)
            .reshape(&[CONV1_CH, 1, KSIZE, KSIZE])?;
        let conv2_k = fan_in_uniform(CONV1_CH * KSIZE * KSIZE, CONV2_CH, rng)
            .reshape(&[CONV2_CH, CONV1_CH, KSIZE, KSIZE])?;
        let enc = Dense::init(dims.conv_flat(), TERRAIN_FEATURES, rng);
        let value = Dense::init(dims.fused(), 1, rng);
        Ok(CriticNet {
            gru,
            conv1_k,
            conv1_b: Tensor::zeros(&[CONV1_CH]),
            conv2_k,
            conv2_b: Tensor::zeros(&[CONV2_CH]),
            enc,
            value,
            dims,
        })
    }

    /// Encode a batch of height maps [B, 1, rows, cols] into u_t [B, 32].
    pub fn encode_map(&self, map: &Tensor) -> Result<Tensor> {
        self.check_map(map)?;
        let batch = map.shape()[0];
        let c1 = map.conv2d_bias(&self.conv1_k, &self.conv1_b, 1)?.tanh()?;
        let c2 = c1.conv2d_bias(&self.conv2_k, &self.conv2_b, CONV2_STRIDE)?.tanh()?;
        let flat = c2.reshape(&[batch, self.dims.conv_flat()])?;
        self.enc.forward(&flat)?.tanh()
    }

    /// One recurrent step: (value, new hidden, u_t).
    pub fn forward(
        &self,
        privileged: &Tensor,
        map: &Tensor,
        hidden: &Tensor,
    ) -> Result<(Tensor, Tensor, Tensor)> {
        if privileged.cols() != self.dims.privileged {
            return Err(Error::config(format!(
                "critic expected privileged width {}, got {}",
                self.dims.privileged,
                privileged.cols()
            )));
        }
        let u = self.encode_map(map)?;
        let m_c = gru_cell(&self.gru, privileged, hidden)?;
        let z = Tensor::concat_cols(&[&m_c, &u])?;
        let value = self.value.forward(&z)?;
        Ok((value, m_c, u))
    }

    fn check_map(&self, map: &Tensor) -> Result<()> {
        let want = [self.dims.map_rows, self.dims.map_cols];
        let ok = match map.shape() {
            [_, 1, r, c] => [*r, *c] == want,
            [1, r, c] => [*r, *c] == want,
            _ => false,
        };
        if !ok {
            return Err(Error::config(format!(
                "critic expected height map [B,1,{},{}], got {:?}",
                want[0],
                want[1],
                map.shape()
            )));
        }
        Ok(())
    }

    pub fn visit(&self, f: &mut impl FnMut(&str, &Tensor)) {
        self.gru.visit(&mut |n, t| f(&format!("gru.{n}"), t));
        f("conv1.k", &self.conv1_k);
        f("conv1.b", &self.conv1_b);
        f("conv2.k", &self.conv2_k);
        f("conv2.b", &self.conv2_b);
        self.enc.visit("enc", f);
        self.value.visit("value", f);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&str, &mut Tensor)) {
        self.gru.visit_mut(&mut |n, t| f(&format!("gru.{n}"), t));
        f("conv1.k", &mut self.conv1_k);
        f("conv1.b", &mut self.conv1_b);
        f("conv2.k", &mut self.conv2_k);
        f("conv2.b", &mut self.conv2_b);
        self.enc.visit_mut("enc", f);
        self.value.visit_mut("value", f);
    }
}

pub struct CriticTape {
    pub gru: GruNodes,
    pub conv1_k: NodeId,
    pub conv1_b: NodeId,
    pub conv2_k: NodeId,
    pub conv2_b: NodeId,
    pub enc: DenseNodes,
    pub value: DenseNodes,
    dims: NetDims,
}

impl CriticTape {
    pub fn register(tape: &mut Tape, net: &CriticNet) -> CriticTape {
        CriticTape {
            gru: GruNodes::register(tape, &net.gru),
            conv1_k: tape.param(net.conv1_k.clone()),
            conv1_b: tape.param(net.conv1_b.clone()),
            conv2_k: tape.param(net.conv2_k.clone()),
            conv2_b: tape.param(net.conv2_b.clone()),
            enc: DenseNodes::register(tape, &net.enc),
            value: DenseNodes::register(tape, &net.value),
            dims: net.dims,
        }
    }

    pub fn encode_map(&self, tape: &mut Tape, map: NodeId) -> Result<NodeId> {
        let batch = tape.value(map).shape()[0];
        let c1 = tape.conv2d(map, self.conv1_k, Some(self.conv1_b), 1)?;
        let c1 = tape.tanh(c1)?;
        let c2 = tape.conv2d(c1, self.conv2_k, Some(self.conv2_b), CONV2_STRIDE)?;
        let c2 = tape.tanh(c2)?;
        let flat = tape.reshape(c2, &[batch, self.dims.conv_flat()])?;
        let e = self.enc.forward(tape, flat)?;
        tape.tanh(e)
    }

    /// One recurrent step given a precomputed terrain feature u_t.
    pub fn step_with_features(
        &self,
        tape: &mut Tape,
        privileged: NodeId,
        u: NodeId,
        hidden: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let m_c = gru_step(tape, &self.gru, privileged, hidden)?;
        let z = tape.concat_cols(&[m_c, u])?;
        let value = self.value.forward(tape, z)?;
        Ok((value, m_c))
    }

    pub fn step(
        &self,
        tape: &mut Tape,
        privileged: NodeId,
        map: NodeId,
        hidden: NodeId,
    ) -> Result<(NodeId, NodeId, NodeId)> {
        let u = self.encode_map(tape, map)?;
        let (value, m_c) = self.step_with_features(tape, privileged, u, hidden)?;
        Ok((value, m_c, u))
    }

    pub fn param_nodes(&self) -> Vec<NodeId> {
        let mut v = self.gru.param_nodes();
        v.extend([
            self.conv1_k,
            self.conv1_b,
            self.conv2_k,
            self.conv2_b,
            self.enc.w,
            self.enc.b,
            self.value.w,
            self.value.b,
        ]);
        v
    }
}

// ---------------------------------------------------------------------------
// Contrastive heads
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ContrastiveHeads {
    pub src1: Dense,
    pub src2: Dense,
    pub tgt1: Dense,
    pub tgt2: Dense,
    dims: NetDims,
}

impl ContrastiveHeads {
    pub fn init(dims: NetDims, rng: &mut ChaCha8Rng) -> Result<ContrastiveHeads> {
        dims.validate()?;
        let tgt_in = TERRAIN_FEATURES + dims.privileged;
        Ok(ContrastiveHeads {
            src1: Dense::init(dims.hidden, EMBED_DIM, rng),
            src2: Dense::init(EMBED_DIM, EMBED_DIM, rng),
            tgt1: Dense::init(tgt_in, EMBED_DIM, rng),
            tgt2: Dense::init(EMBED_DIM, EMBED_DIM, rng),
            dims,
        })
    }

    /// Source embedding from the actor latent m_t^a, L2-normalized rows.
    pub fn source(&self, m_a: &Tensor) -> Result<Tensor> {
        let x = self.src1.forward(m_a)?.tanh()?;
        self.src2.forward(&x)?.l2_normalize_rows(L2_EPS)
    }

    /// Target embedding from (u_t, s_t); the caller is responsible for
    /// detaching u_t on the tape path.
    pub fn target(&self, u: &Tensor, privileged: &Tensor) -> Result<Tensor> {
        let joined = Tensor::concat_cols(&[u, privileged])?;
        let x = self.tgt1.forward(&joined)?.tanh()?;
        self.tgt2.forward(&x)?.l2_normalize_rows(L2_EPS)
    }

    pub fn visit(&self, f: &mut impl FnMut(&str, &Tensor)) {
        self.src1.visit("src1", f);
        self.src2.visit("src2", f);
        self.tgt1.visit("tgt1", f);
        self.tgt2.visit("tgt2", f);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&str, &mut Tensor)) {
        self.src1.visit_mut("src1", f);
        self.src2.visit_mut("src2", f);
        self.tgt1.visit_mut("tgt1", f);
        self.tgt2.visit_mut("tgt2", f);
    }

    pub fn target_input_width(&self) -> usize {
        TERRAIN_FEATURES + self.dims.privileged
    }
}

pub struct HeadsTape {
    pub src1: DenseNodes,
    pub src2: DenseNodes,
    pub tgt1: DenseNodes,
    pub tgt2: DenseNodes,
}

impl HeadsTape {
    pub fn register(tape: &mut Tape, net: &ContrastiveHeads) -> HeadsTape {
        HeadsTape {
            src1: DenseNodes::register(tape, &net.src1),
            src2: DenseNodes::register(tape, &net.src2),
            tgt1: DenseNodes::register(tape, &net.tgt1),
            tgt2: DenseNodes::register(tape, &net.tgt2),
        }
    }

    pub fn source(&self, tape: &mut Tape, m_a: NodeId) -> Result<NodeId> {
        let x = self.src1.forward(tape, m_a)?;
        let x = tape.tanh(x)?;
        let y = self.src2.forward(tape, x)?;
        tape.l2_normalize_rows(y, L2_EPS)
    }

    /// Target embedding; `u` is detached here so the contrastive loss can
    /// never reach the critic's terrain encoder.
    pub fn target(&self, tape: &mut Tape, u: NodeId, privileged: NodeId) -> Result<NodeId> {
        let u_detached = tape.stop_gradient(u);
        let joined = tape.concat_cols(&[u_detached, privileged])?;
        let x = self.tgt1.forward(tape, joined)?;
        let x = tape.tanh(x)?;
        let y = self.tgt2.forward(tape, x)?;
        tape.l2_normalize_rows(y, L2_EPS)
    }

    pub fn param_nodes(&self) -> Vec<NodeId> {
        vec![
            self.src1.w, self.src1.b, self.src2.w, self.src2.b,
            self.tgt1.w, self.tgt1.b, self.tgt2.w, self.tgt2.b,
        ]
    }
}

// ---------------------------------------------------------------------------
// Gaussian policy head
// ---------------------------------------------------------------------------

/// Sample a batch of diagonal-Gaussian actions; returns per-row log-probs.
pub fn sample_action(
    mean: &Tensor,
    log_std: &Tensor,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor, Tensor)> {
    let (rows, cols) = (mean.rows(), mean.cols());
    if log_std.numel() != cols {
        return Err(Error::config(format!(
            "log_std width {} vs action width {}",
            log_std.numel(),
            cols
        )));
    }
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let std = log_std.data()[c].exp();
            let eps: f64 = rng.sample(rand_distr::StandardNormal);
            out.push(mean.data()[r * cols + c] + std * eps);
        }
    }
    let action = Tensor::from_vec(mean.shape(), out)?;
    let logp = gaussian_log_prob(mean, log_std, &action)?;
    Ok((action, logp))
}

/// Row-wise log density of `action` under N(mean, diag(exp(log_std))²).
pub fn gaussian_log_prob(mean: &Tensor, log_std: &Tensor, action: &Tensor) -> Result<Tensor> {
    let (rows, cols) = (mean.rows(), mean.cols());
    if action.shape() != mean.shape() || log_std.numel() != cols {
        return Err(Error::config(format!(
            "log_prob shape mismatch: mean {:?}, action {:?}, log_std {:?}",
            mean.shape(),
            action.shape(),
            log_std.shape()
        )));
    }
    const LN_2PI: f64 = 1.8378770664093453;
    let mut out = Vec::with_capacity(rows);
    let mut sum_log_std = 0.0;
    for c in 0..cols {
        sum_log_std += log_std.data()[c];
    }
    for r in 0..rows {
        let mut quad = 0.0;
        for c in 0..cols {
            let z = (action.data()[r * cols + c] - mean.data()[r * cols + c])
                / log_std.data()[c].exp();
            quad += z * z;
        }
        out.push(-0.5 * quad - sum_log_std - 0.5 * cols as f64 * LN_2PI);
    }
    Tensor::from_vec(&[rows], out)
}

/// Taped log-prob of fixed actions under the current (mean, log_std):
/// shape [B, 1]. Mirrors `gaussian_log_prob` analytically (not bit-for-bit,
/// since the eager path accumulates per-row; tested to 1e-12).
pub fn gaussian_log_prob_on_tape(
    tape: &mut Tape,
    mean: NodeId,
    log_std: NodeId,
    action_const: NodeId,
) -> Result<NodeId> {
    const LN_2PI: f64 = 1.8378770664093453;
    let cols = tape.value(mean).cols();
    let diff = tape.sub(action_const, mean)?;
    let neg_log_std = tape.scale(log_std, -1.0)?;
    let inv_std = tape.exp(neg_log_std)?;
    let z = tape.mul_row(diff, inv_std)?;
    let z2 = tape.mul(z, z)?;
    let quad = tape.sum_rows(z2)?;
    let half = tape.scale(quad, -0.5)?;
    let sum_ls = tape.sum(log_std)?;
    let with_std = tape.add_scaled(half, sum_ls, -1.0)?;
    tape.add_scalar(with_std, -0.5 * cols as f64 * LN_2PI)
}

/// Differential entropy of the diagonal Gaussian: Σ log σ + d/2 (1 + ln 2π).
pub fn gaussian_entropy(log_std: &Tensor) -> f64 {
    const LN_2PI: f64 = 1.8378770664093453;
    let d = log_std.numel() as f64;
    log_std.data().iter().sum::<f64>() + 0.5 * d * (1.0 + LN_2PI)
}

/// Taped entropy (scalar node), differentiable w.r.t. log_std.
pub fn gaussian_entropy_on_tape(tape: &mut Tape, log_std: NodeId) -> Result<NodeId> {
    const LN_2PI: f64 = 1.8378770664093453;
    let d = tape.value(log_std).numel() as f64;
    let s = tape.sum(log_std)?;
    tape.add_scalar(s, 0.5 * d * (1.0 + LN_2PI))
}
