//! Gated recurrent unit.
//!
//! One GRU cell with separate per-gate weights:
//!
//! ```text
//! r  = sigmoid(x W_xr + h W_hr + b_r)
//! z  = sigmoid(x W_xz + h W_hz + b_z)
//! n  = tanh   (x W_xn + r o (h W_hn) + b_n)
//! h' = (1 - z) o n + z o h
//! ```
//!
//! Inputs are batched row-wise: `x` is `[B, in]`, `h` is `[B, hidden]`.
//! The taped form ([`gru_step`]) and the eager form ([`gru_cell`]) share
//! kernels, so their outputs are bit-identical.

use super::init::{fan_in_uniform, orthogonal};
use super::tape::{NodeId, Tape};
use super::Tensor;
use crate::error::Result;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_xr: Tensor,
    pub w_hr: Tensor,
    pub b_r: Tensor,
    pub w_xz: Tensor,
    pub w_hz: Tensor,
    pub b_z: Tensor,
    pub w_xn: Tensor,
    pub w_hn: Tensor,
    pub b_n: Tensor,
}

impl GruParams {
    /// Fan-in uniform input weights, orthogonal recurrent weights, zero
    /// biases.
    pub fn init(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> GruParams {
        GruParams {
            w_xr: fan_in_uniform(input, hidden, rng),
            w_hr: orthogonal(hidden, rng),
            b_r: Tensor::zeros(&[hidden]),
            w_xz: fan_in_uniform(input, hidden, rng),
            w_hz: orthogonal(hidden, rng),
            b_z: Tensor::zeros(&[hidden]),
            w_xn: fan_in_uniform(input, hidden, rng),
            w_hn: orthogonal(hidden, rng),
            b_n: Tensor::zeros(&[hidden]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_xr.shape()[0]
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_xr.shape()[1]
    }

    pub fn visit(&self, f: &mut impl FnMut(&str, &Tensor)) {
        f("w_xr", &self.w_xr);
        f("w_hr", &self.w_hr);
        f("b_r", &self.b_r);
        f("w_xz", &self.w_xz);
        f("w_hz", &self.w_hz);
        f("b_z", &self.b_z);
        f("w_xn", &self.w_xn);
        f("w_hn", &self.w_hn);
        f("b_n", &self.b_n);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&str, &mut Tensor)) {
        f("w_xr", &mut self.w_xr);
        f("w_hr", &mut self.w_hr);
        f("b_r", &mut self.b_r);
        f("w_xz", &mut self.w_xz);
        f("w_hz", &mut self.w_hz);
        f("b_z", &mut self.b_z);
        f("w_xn", &mut self.w_xn);
        f("w_hn", &mut self.w_hn);
        f("b_n", &mut self.b_n);
    }
}

/// Tape-registered GRU parameters.
#[derive(Debug, Clone, Copy)]
pub struct GruNodes {
    pub w_xr: NodeId,
    pub w_hr: NodeId,
    pub b_r: NodeId,
    pub w_xz: NodeId,
    pub w_hz: NodeId,
    pub b_z: NodeId,
    pub w_xn: NodeId,
    pub w_hn: NodeId,
    pub b_n: NodeId,
}

impl GruNodes {
    pub fn register(tape: &mut Tape, p: &GruParams) -> GruNodes {
        GruNodes {
            w_xr: tape.param(p.w_xr.clone()),
            w_hr: tape.param(p.w_hr.clone()),
            b_r: tape.param(p.b_r.clone()),
            w_xz: tape.param(p.w_xz.clone()),
            w_hz: tape.param(p.w_hz.clone()),
            b_z: tape.param(p.b_z.clone()),
            w_xn: tape.param(p.w_xn.clone()),
            w_hn: tape.param(p.w_hn.clone()),
            b_n: tape.param(p.b_n.clone()),
        }
    }

    /// Parameter nodes in the same order as `GruParams::visit`.
    pub fn param_nodes(&self) -> Vec<NodeId> {
        vec![
            self.w_xr, self.w_hr, self.b_r,
            self.w_xz, self.w_hz, self.b_z,
            self.w_xn, self.w_hn, self.b_n,
        ]
    }
}

/// One taped GRU step: `x [B,in]`, `h [B,hidden]` -> new hidden `[B,hidden]`.
pub fn gru_step(tape: &mut Tape, p: &GruNodes, x: NodeId, h: NodeId) -> Result<NodeId> {
    let xr = tape.matmul(x, p.w_xr)?;
    let hr = tape.matmul(h, p.w_hr)?;
    let pre_r = tape.add(xr, hr)?;
    let pre_r = tape.add_row(pre_r, p.b_r)?;
    let r = tape.sigmoid(pre_r)?;

    let xz = tape.matmul(x, p.w_xz)?;
    let hz = tape.matmul(h, p.w_hz)?;
    let pre_z = tape.add(xz, hz)?;
    let pre_z = tape.add_row(pre_z, p.b_z)?;
    let z = tape.sigmoid(pre_z)?;

    let xn = tape.matmul(x, p.w_xn)?;
    let hn = tape.matmul(h, p.w_hn)?;
    let rhn = tape.mul(r, hn)?;
    let pre_n = tape.add(xn, rhn)?;
    let pre_n = tape.add_row(pre_n, p.b_n)?;
    let n = tape.tanh(pre_n)?;

    // h' = (1 - z) o n + z o h  ==  n + z o (h - n)
    let h_minus_n = tape.sub(h, n)?;
    let gated = tape.mul(z, h_minus_n)?;
    tape.add(n, gated)
}

/// Eager GRU step over the same kernels. Rank-1 inputs are treated as a
/// batch of one and returned rank-1.
pub fn gru_cell(p: &GruParams, x: &Tensor, h_prev: &Tensor) -> Result<Tensor> {
    let rank1 = x.rank() == 1;
    let x2 = if rank1 { x.reshape(&[1, x.numel()])? } else { x.clone() };
    let h2 = if rank1 {
        h_prev.reshape(&[1, h_prev.numel()])?
    } else {
        h_prev.clone()
    };

    let r = x2
        .matmul(&p.w_xr)?
        .add(&h2.matmul(&p.w_hr)?)?
        .add_row(&p.b_r)?
        .sigmoid()?;
    let z = x2
        .matmul(&p.w_xz)?
        .add(&h2.matmul(&p.w_hz)?)?
        .add_row(&p.b_z)?
        .sigmoid()?;
    let n = x2
        .matmul(&p.w_xn)?
        .add(&r.mul(&h2.matmul(&p.w_hn)?)?)?
        .add_row(&p.b_n)?
        .tanh()?;
    let out = n.add(&z.mul(&h2.sub(&n)?)?)?;
    if rank1 {
        out.reshape(&[out.numel()])
    } else {
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;
    use approx::assert_relative_eq;

    fn small_params() -> GruParams {
        let mut rng = SeedStream::new(21).with_str("gru-test").rng();
        GruParams::init(4, 6, &mut rng)
    }

    #[test]
    fn taped_and_eager_cells_agree_bit_for_bit() {
        let p = small_params();
        let mut rng = SeedStream::new(22).rng();
        let x = crate::tensor::init::fan_in_uniform(3, 4, &mut rng);
        let h = crate::tensor::init::fan_in_uniform(3, 6, &mut rng);

        let eager = gru_cell(&p, &x, &h).unwrap();

        let mut tape = Tape::new();
        let nodes = GruNodes::register(&mut tape, &p);
        let xn = tape.constant(x);
        let hn = tape.constant(h);
        let out = gru_step(&mut tape, &nodes, xn, hn).unwrap();
        assert_eq!(tape.value(out).data(), eager.data());
    }

    #[test]
    fn gru_matches_scalar_reference_implementation() {
        // Hand-rolled per-element reference for a batch of one.
        let p = small_params();
        let mut rng = SeedStream::new(23).rng();
        let x = crate::tensor::init::fan_in_uniform(1, 4, &mut rng);
        let h = crate::tensor::init::fan_in_uniform(1, 6, &mut rng);
        let out = gru_cell(&p, &x, &h).unwrap();

        for j in 0..6 {
            let lin = |w: &Tensor, v: &Tensor, dim: usize| -> f64 {
                (0..dim).map(|i| v.data()[i] * w.at2(i, j)).sum()
            };
            let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
            let r = sig(lin(&p.w_xr, &x, 4) + lin(&p.w_hr, &h, 6) + p.b_r.data()[j]);
            let z = sig(lin(&p.w_xz, &x, 4) + lin(&p.w_hz, &h, 6) + p.b_z.data()[j]);
            let n = (lin(&p.w_xn, &x, 4) + r * lin(&p.w_hn, &h, 6) + p.b_n.data()[j]).tanh();
            let expect = (1.0 - z) * n + z * h.data()[j];
            assert_relative_eq!(out.at2(0, j), expect, max_relative = 1e-12);
        }
    }

    #[test]
    fn zero_update_gate_bias_keeps_cell_responsive() {
        // With zero h and zero x the new hidden is tanh(b_n)*(1-sig(b_z)) = 0.
        let p = small_params();
        let x = Tensor::zeros(&[1, 4]);
        let h = Tensor::zeros(&[1, 6]);
        let out = gru_cell(&p, &x, &h).unwrap();
        for &v in out.data() {
            assert_relative_eq!(v, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn rank1_input_round_trips() {
        let p = small_params();
        let mut rng = SeedStream::new(24).rng();
        let x = crate::tensor::init::fan_in_uniform(1, 4, &mut rng).reshape(&[4]).unwrap();
        let h = Tensor::zeros(&[6]);
        let out = gru_cell(&p, &x, &h).unwrap();
        assert_eq!(out.shape(), &[6]);
    }
}
