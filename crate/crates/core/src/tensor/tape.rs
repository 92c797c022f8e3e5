//! Reverse-mode automatic differentiation over a linear tape.
//!
//! A [`Tape`] records every operation as it executes (a Wengert list).
//! Values are computed eagerly with the kernels from the parent module, so a
//! taped forward pass produces bit-identical numbers to the eager API.
//! [`Tape::backward`] walks the list in reverse from a scalar root and
//! accumulates vector-Jacobian products into every node that (transitively)
//! depends on a parameter leaf.
//!
//! Gradients are verified against central finite differences; see
//! [`numeric_gradient`] and the `gradcheck` integration tests.

use super::{conv2d_kernel, conv_dims, row_norm, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug)]
enum Op {
    Leaf,
    StopGrad { a: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Minimum { a: NodeId, b: NodeId },
    Clamp { a: NodeId, lo: f64, hi: f64 },
    Scale { a: NodeId, k: f64 },
    AddScalar { a: NodeId },
    /// `a + k * s` where `s` is a scalar-shaped node broadcast over `a`.
    AddScaled { a: NodeId, s: NodeId, k: f64 },
    AddRow { a: NodeId, v: NodeId },
    MulRow { a: NodeId, v: NodeId },
    MulCol { a: NodeId, v: NodeId },
    Tanh { a: NodeId },
    Sigmoid { a: NodeId },
    Relu { a: NodeId },
    Exp { a: NodeId },
    Ln { a: NodeId },
    Sum { a: NodeId },
    Mean { a: NodeId },
    SumRows { a: NodeId },
    Matmul { a: NodeId, b: NodeId },
    MatmulNT { a: NodeId, b: NodeId },
    ConcatRows { parts: Vec<NodeId> },
    ConcatCols { parts: Vec<NodeId> },
    SliceCols { a: NodeId, start: usize },
    SoftmaxRows { a: NodeId },
    LogSumExpRows { a: NodeId },
    L2NormalizeRows { a: NodeId, eps: f64 },
    Conv2d {
        input: NodeId,
        kernels: NodeId,
        bias: Option<NodeId>,
        stride: usize,
    },
    Reshape { a: NodeId },
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`]. Nodes that do not
/// require gradients, or that the root does not depend on, have no entry.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads[id.0].take()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Trainable leaf: gradients flow into it.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Non-trainable leaf (observations, targets, masks).
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    // ── recorded operations ─────────────────────────────────────────────────

    pub fn stop_gradient(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).clone();
        self.push(v, Op::StopGrad { a }, false)
    }

    /// Data-flow inputs of a node, *including* stop-gradient edges. This is
    /// the basis for provenance audits (e.g. proving the actor's outputs
    /// cannot see privileged inputs): it follows what data could reach a
    /// node, not what gradients flow.
    pub fn op_inputs(&self, id: NodeId) -> Vec<NodeId> {
        match &self.nodes[id.0].op {
            Op::Leaf => vec![],
            Op::StopGrad { a }
            | Op::Clamp { a, .. }
            | Op::Scale { a, .. }
            | Op::AddScalar { a }
            | Op::Tanh { a }
            | Op::Sigmoid { a }
            | Op::Relu { a }
            | Op::Exp { a }
            | Op::Ln { a }
            | Op::Sum { a }
            | Op::Mean { a }
            | Op::SumRows { a }
            | Op::SliceCols { a, .. }
            | Op::SoftmaxRows { a }
            | Op::LogSumExpRows { a }
            | Op::L2NormalizeRows { a, .. }
            | Op::Reshape { a } => vec![*a],
            Op::Add { a, b }
            | Op::Sub { a, b }
            | Op::Mul { a, b }
            | Op::Minimum { a, b }
            | Op::Matmul { a, b }
            | Op::MatmulNT { a, b } => vec![*a, *b],
            Op::AddScaled { a, s, .. } => vec![*a, *s],
            Op::AddRow { a, v } | Op::MulRow { a, v } | Op::MulCol { a, v } => vec![*a, *v],
            Op::ConcatRows { parts } | Op::ConcatCols { parts } => parts.clone(),
            Op::Conv2d {
                input,
                kernels,
                bias,
                ..
            } => {
                let mut v = vec![*input, *kernels];
                if let Some(b) = bias {
                    v.push(*b);
                }
                v
            }
        }
    }

    /// Every node whose data can reach `root` (root included).
    pub fn reachable_from(&self, root: NodeId) -> Vec<bool> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![root];
        while let Some(id) = stack.pop() {
            if seen[id.0] {
                continue;
            }
            seen[id.0] = true;
            stack.extend(self.op_inputs(id));
        }
        seen
    }

    /// Index accessor for audits that iterate all nodes.
    pub fn node_index(&self, id: NodeId) -> usize {
        id.0
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Add { a, b }, ng))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).sub(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Sub { a, b }, ng))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).mul(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Mul { a, b }, ng))
    }

    pub fn minimum(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).minimum(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Minimum { a, b }, ng))
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        let v = self.value(a).clamp(lo, hi)?;
        let ng = self.needs(a);
        Ok(self.push(v, Op::Clamp { a, lo, hi }, ng))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> Result<NodeId> {
        let v = self.value(a).scale(k)?;
        let ng = self.needs(a);
        Ok(self.push(v, Op::Scale { a, k }, ng))
    }

    pub fn add_scalar(&mut self, a: NodeId, k: f64) -> Result<NodeId> {
        let v = self.value(a).add_scalar(k)?;
        let ng = self.needs(a);
        Ok(self.push(v, Op::AddScalar { a }, ng))
    }

    /// `a + k * s`, broadcasting the scalar-shaped node `s` over `a`.
    pub fn add_scaled(&mut self, a: NodeId, s: NodeId, k: f64) -> Result<NodeId> {
        let sv = self.value(s).item()?;
        let v = self.value(a).add_scalar(k * sv)?;
        let ng = self.needs(a) || self.needs(s);
        Ok(self.push(v, Op::AddScaled { a, s, k }, ng))
    }

    pub fn add_row(&mut self, a: NodeId, v: NodeId) -> Result<NodeId> {
        let out = self.value(a).add_row(self.value(v))?;
        let ng = self.needs(a) || self.needs(v);
        Ok(self.push(out, Op::AddRow { a, v }, ng))
    }

    pub fn mul_row(&mut self, a: NodeId, v: NodeId) -> Result<NodeId> {
        let out = self.value(a).mul_row(self.value(v))?;
        let ng = self.needs(a) || self.needs(v);
        Ok(self.push(out, Op::MulRow { a, v }, ng))
    }

    pub fn mul_col(&mut self, a: NodeId, v: NodeId) -> Result<NodeId> {
        let out = self.value(a).mul_col(self.value(v))?;
        let ng = self.needs(a) || self.needs(v);
        Ok(self.push(out, Op::MulCol { a, v }, ng))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).tanh()?;
        let ng = self.needs(a);
        Ok(self.push(v, Op::Tanh { a }, ng))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).sigmoid()?;
        let ng = self.needs(a);
        Ok(self.push(v, Op::Sigmoid { a }, ng))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).relu()?;
        let ng = self.needs(a);
        Ok(self.push(v, Op::Relu { a }, ng))
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).exp()?;
        let ng = self.needs(a);
        Ok(self.push(v, Op::Exp { a }, ng))
    }

    pub fn ln(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).ln()?;
        let ng = self.needs(a);
        Ok(self.push(v, Op::Ln { a }, ng))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).sum()?;
        let ng = self.needs(a);
        Ok(self.push(v, Op::Sum { a }, ng))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).mean()?;
        let ng = self.needs(a);
        Ok(self.push(v, Op::Mean { a }, ng))
    }

    pub fn sum_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).sum_rows()?;
        let ng = self.needs(a);
        Ok(self.push(v, Op::SumRows { a }, ng))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Matmul { a, b }, ng))
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul_nt(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::MatmulNT { a, b }, ng))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let vals: Vec<&Tensor> = parts.iter().map(|id| self.value(*id)).collect();
        let v = Tensor::concat_rows(&vals)?;
        let ng = parts.iter().any(|id| self.needs(*id));
        Ok(self.push(v, Op::ConcatRows { parts: parts.to_vec() }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let vals: Vec<&Tensor> = parts.iter().map(|id| self.value(*id)).collect();
        let v = Tensor::concat_cols(&vals)?;
        let ng = parts.iter().any(|id| self.needs(*id));
        Ok(self.push(v, Op::ConcatCols { parts: parts.to_vec() }, ng))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = self.value(a).slice_cols(start, len)?;
        let ng = self.needs(a);
        Ok(self.push(v, Op::SliceCols { a, start }, ng))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).softmax_rows()?;
        let ng = self.needs(a);
        Ok(self.push(v, Op::SoftmaxRows { a }, ng))
    }

    pub fn logsumexp_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).logsumexp_rows()?;
        let ng = self.needs(a);
        Ok(self.push(v, Op::LogSumExpRows { a }, ng))
    }

    pub fn l2_normalize_rows(&mut self, a: NodeId, eps: f64) -> Result<NodeId> {
        let v = self.value(a).l2_normalize_rows(eps)?;
        let ng = self.needs(a);
        Ok(self.push(v, Op::L2NormalizeRows { a, eps }, ng))
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernels: NodeId,
        bias: Option<NodeId>,
        stride: usize,
    ) -> Result<NodeId> {
        let v = conv2d_kernel(
            self.value(input),
            self.value(kernels),
            bias.map(|b| self.value(b)),
            stride,
        )?;
        let ng = self.needs(input)
            || self.needs(kernels)
            || bias.map_or(false, |b| self.needs(b));
        Ok(self.push(
            v,
            Op::Conv2d {
                input,
                kernels,
                bias,
                stride,
            },
            ng,
        ))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.value(a).reshape(shape)?;
        let ng = self.needs(a);
        Ok(self.push(v, Op::Reshape { a }, ng))
    }

    // ── backward pass ───────────────────────────────────────────────────────

    /// Accumulate d(root)/d(node) for every node the scalar `root` depends
    /// on. Fails if `root` is not scalar-shaped or a gradient goes non-finite.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        if self.value(root).numel() != 1 {
            return Err(Error::config(format!(
                "backward: root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::filled(self.value(root).shape(), 1.0));

        for i in (0..=root.0).rev() {
            if !self.nodes[i].needs_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            // An all-zero gradient contributes nothing downstream (e.g. a
            // loss term included with coefficient 0); skip the propagation.
            if g.data().iter().any(|&v| v != 0.0) {
                self.propagate(i, &g, &mut grads)?;
            }
            grads[i] = Some(g);
        }

        for g in grads.iter().flatten() {
            if !g.is_finite_all() {
                return Err(Error::numeric(
                    "backward: produced a non-finite gradient".to_string(),
                ));
            }
        }
        Ok(Gradients { grads })
    }

    fn accum(&self, grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor) -> Result<()> {
        if !self.needs(id) {
            return Ok(());
        }
        debug_assert_eq!(delta.shape(), self.value(id).shape());
        match &mut grads[id.0] {
            Some(g) => {
                for (gi, di) in g.data_mut().iter_mut().zip(delta.data()) {
                    *gi += di;
                }
            }
            None => grads[id.0] = Some(delta),
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |id: NodeId| &self.nodes[id.0].value;
        match &self.nodes[i].op {
            Op::Leaf | Op::StopGrad { .. } => {}
            Op::Add { a, b } => {
                self.accum(grads, *a, g.clone())?;
                self.accum(grads, *b, g.clone())?;
            }
            Op::Sub { a, b } => {
                self.accum(grads, *a, g.clone())?;
                self.accum(grads, *b, g.scale(-1.0)?)?;
            }
            Op::Mul { a, b } => {
                self.accum(grads, *a, g.mul(val(*b))?)?;
                self.accum(grads, *b, g.mul(val(*a))?)?;
            }
            Op::Minimum { a, b } => {
                // Subgradient: ties route to the first operand.
                let av = val(*a);
                let bv = val(*b);
                let mut ga = g.clone();
                let mut gb = g.clone();
                for ((ga_i, gb_i), (&x, &y)) in ga
                    .data_mut()
                    .iter_mut()
                    .zip(gb.data_mut())
                    .zip(av.data().iter().zip(bv.data()))
                {
                    if x <= y {
                        *gb_i = 0.0;
                    } else {
                        *ga_i = 0.0;
                    }
                }
                self.accum(grads, *a, ga)?;
                self.accum(grads, *b, gb)?;
            }
            Op::Clamp { a, lo, hi } => {
                let av = val(*a);
                let mut ga = g.clone();
                for (gi, &x) in ga.data_mut().iter_mut().zip(av.data()) {
                    if x < *lo || x > *hi {
                        *gi = 0.0;
                    }
                }
                self.accum(grads, *a, ga)?;
            }
            Op::Scale { a, k } => {
                self.accum(grads, *a, g.scale(*k)?)?;
            }
            Op::AddScalar { a } => {
                self.accum(grads, *a, g.clone())?;
            }
            Op::AddScaled { a, s, k } => {
                self.accum(grads, *a, g.clone())?;
                let total: f64 = g.data().iter().sum();
                self.accum(grads, *s, Tensor::scalar(*k * total))?;
            }
            Op::AddRow { a, v } => {
                self.accum(grads, *a, g.clone())?;
                let gv = g.sum_cols()?.reshape(val(*v).shape())?;
                self.accum(grads, *v, gv)?;
            }
            Op::MulRow { a, v } => {
                self.accum(grads, *a, g.mul_row(val(*v))?)?;
                let gv = g.mul(val(*a))?.sum_cols()?.reshape(val(*v).shape())?;
                self.accum(grads, *v, gv)?;
            }
            Op::MulCol { a, v } => {
                self.accum(grads, *a, g.mul_col(val(*v))?)?;
                let gv = g.mul(val(*a))?.sum_rows()?.reshape(val(*v).shape())?;
                self.accum(grads, *v, gv)?;
            }
            Op::Tanh { a } => {
                let y = &self.nodes[i].value;
                let dy = y.map(|t| 1.0 - t * t);
                self.accum(grads, *a, g.mul(&dy)?)?;
            }
            Op::Sigmoid { a } => {
                let y = &self.nodes[i].value;
                let dy = y.map(|s| s * (1.0 - s));
                self.accum(grads, *a, g.mul(&dy)?)?;
            }
            Op::Relu { a } => {
                let av = val(*a);
                let mut ga = g.clone();
                for (gi, &x) in ga.data_mut().iter_mut().zip(av.data()) {
                    if x <= 0.0 {
                        *gi = 0.0;
                    }
                }
                self.accum(grads, *a, ga)?;
            }
            Op::Exp { a } => {
                let y = &self.nodes[i].value;
                self.accum(grads, *a, g.mul(y)?)?;
            }
            Op::Ln { a } => {
                let av = val(*a);
                let dy = av.map(|x| 1.0 / x);
                self.accum(grads, *a, g.mul(&dy)?)?;
            }
            Op::Sum { a } => {
                let ga = Tensor::filled(val(*a).shape(), g.data()[0]);
                self.accum(grads, *a, ga)?;
            }
            Op::Mean { a } => {
                let n = val(*a).numel() as f64;
                let ga = Tensor::filled(val(*a).shape(), g.data()[0] / n);
                self.accum(grads, *a, ga)?;
            }
            Op::SumRows { a } => {
                let av = val(*a);
                let c = av.cols();
                let mut ga = Tensor::zeros(av.shape());
                for (row, &gr) in ga.data_mut().chunks_exact_mut(c).zip(g.data()) {
                    for o in row.iter_mut() {
                        *o = gr;
                    }
                }
                self.accum(grads, *a, ga)?;
            }
            Op::Matmul { a, b } => {
                self.accum(grads, *a, g.matmul_nt(val(*b))?)?;
                self.accum(grads, *b, val(*a).matmul_tn(g)?)?;
            }
            Op::MatmulNT { a, b } => {
                self.accum(grads, *a, g.matmul(val(*b))?)?;
                self.accum(grads, *b, g.matmul_tn(val(*a))?)?;
            }
            Op::ConcatRows { parts } => {
                let c = g.cols();
                let mut row0 = 0;
                for p in parts {
                    let r = val(*p).rows();
                    let block = Tensor::from_vec(
                        &[r, c],
                        g.data()[row0 * c..(row0 + r) * c].to_vec(),
                    )?;
                    self.accum(grads, *p, block)?;
                    row0 += r;
                }
            }
            Op::ConcatCols { parts } => {
                let rows = g.rows();
                let mut col0 = 0;
                for p in parts {
                    let pc = val(*p).cols();
                    let mut data = Vec::with_capacity(rows * pc);
                    for r in 0..rows {
                        data.extend_from_slice(&g.row(r)[col0..col0 + pc]);
                    }
                    self.accum(grads, *p, Tensor::from_vec(&[rows, pc], data)?)?;
                    col0 += pc;
                }
            }
            Op::SliceCols { a, start } => {
                let av = val(*a);
                let (rows, cols) = (av.rows(), av.cols());
                let len = g.cols();
                let mut ga = Tensor::zeros(av.shape());
                for r in 0..rows {
                    let dst = &mut ga.data_mut()[r * cols + start..r * cols + start + len];
                    dst.copy_from_slice(g.row(r));
                }
                self.accum(grads, *a, ga)?;
            }
            Op::SoftmaxRows { a } => {
                let y = &self.nodes[i].value;
                let c = y.cols();
                let mut ga = Tensor::zeros(y.shape());
                for ((out, yr), gr) in ga
                    .data_mut()
                    .chunks_exact_mut(c)
                    .zip(y.data().chunks_exact(c))
                    .zip(g.data().chunks_exact(c))
                {
                    let dot: f64 = yr.iter().zip(gr).map(|(&yi, &gi)| yi * gi).sum();
                    for ((o, &yi), &gi) in out.iter_mut().zip(yr).zip(gr) {
                        *o = yi * (gi - dot);
                    }
                }
                self.accum(grads, *a, ga)?;
            }
            Op::LogSumExpRows { a } => {
                let av = val(*a);
                let lse = &self.nodes[i].value;
                let c = av.cols();
                let mut ga = Tensor::zeros(av.shape());
                for ((out, xr), (&l, &gr)) in ga
                    .data_mut()
                    .chunks_exact_mut(c)
                    .zip(av.data().chunks_exact(c))
                    .zip(lse.data().iter().zip(g.data()))
                {
                    for (o, &x) in out.iter_mut().zip(xr) {
                        *o = gr * (x - l).exp();
                    }
                }
                self.accum(grads, *a, ga)?;
            }
            Op::L2NormalizeRows { a, eps } => {
                let av = val(*a);
                let y = &self.nodes[i].value;
                let c = av.cols();
                let mut ga = Tensor::zeros(av.shape());
                for ((out, (xr, yr)), gr) in ga
                    .data_mut()
                    .chunks_exact_mut(c)
                    .zip(av.data().chunks_exact(c).zip(y.data().chunks_exact(c)))
                    .zip(g.data().chunks_exact(c))
                {
                    let n = row_norm(xr, *eps);
                    let dot: f64 = yr.iter().zip(gr).map(|(&yi, &gi)| yi * gi).sum();
                    for ((o, &yi), &gi) in out.iter_mut().zip(yr).zip(gr) {
                        *o = (gi - yi * dot) / n;
                    }
                }
                self.accum(grads, *a, ga)?;
            }
            Op::Conv2d {
                input,
                kernels,
                bias,
                stride,
            } => {
                self.conv2d_backward(*input, *kernels, *bias, *stride, g, grads)?;
            }
            Op::Reshape { a } => {
                self.accum(grads, *a, g.reshape(val(*a).shape())?)?;
            }
        }
        Ok(())
    }

    fn conv2d_backward(
        &self,
        input: NodeId,
        kernels: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        let in_val = self.value(input);
        let k_val = self.value(kernels);
        let d = conv_dims(in_val, k_val, stride)?;
        let in_plane = d.in_h * d.in_w;
        let out_plane = d.out_h * d.out_w;
        let k_plane = d.k_h * d.k_w;

        let mut g_in = Tensor::zeros(in_val.shape());
        let mut g_k = Tensor::zeros(k_val.shape());
        let mut g_b = vec![0.0; d.out_ch];

        for b in 0..d.batch {
            for f in 0..d.out_ch {
                let out_base = (b * d.out_ch + f) * out_plane;
                for oy in 0..d.out_h {
                    for ox in 0..d.out_w {
                        let go = g.data()[out_base + oy * d.out_w + ox];
                        if go == 0.0 {
                            continue;
                        }
                        g_b[f] += go;
                        for c in 0..d.in_ch {
                            let ib = (b * d.in_ch + c) * in_plane;
                            let kb = (f * d.in_ch + c) * k_plane;
                            for ky in 0..d.k_h {
                                let iy = oy * stride + ky;
                                let irow = ib + iy * d.in_w + ox * stride;
                                let krow = kb + ky * d.k_w;
                                for kx in 0..d.k_w {
                                    g_in.data_mut()[irow + kx] += go * k_val.data()[krow + kx];
                                    g_k.data_mut()[krow + kx] += go * in_val.data()[irow + kx];
                                }
                            }
                        }
                    }
                }
            }
        }

        self.accum(grads, input, g_in)?;
        self.accum(grads, kernels, g_k)?;
        if let Some(bid) = bias {
            self.accum(grads, bid, Tensor::from_vec(&[d.out_ch], g_b)?)?;
        }
        Ok(())
    }
}

// ── finite-difference verification ──────────────────────────────────────────

/// Central-difference gradient of a scalar function of several tensors,
/// used to verify tape gradients in tests and examples. `f` must be a pure
/// function of its inputs.
pub fn numeric_gradient(
    mut f: impl FnMut(&[Tensor]) -> Result<f64>,
    params: &[Tensor],
    h: f64,
) -> Result<Vec<Tensor>> {
    let mut out = Vec::with_capacity(params.len());
    for (pi, p) in params.iter().enumerate() {
        let mut g = Tensor::zeros(p.shape());
        for e in 0..p.numel() {
            let mut plus = params.to_vec();
            plus[pi].data_mut()[e] += h;
            let mut minus = params.to_vec();
            minus[pi].data_mut()[e] -= h;
            g.data_mut()[e] = (f(&plus)? - f(&minus)?) / (2.0 * h);
        }
        out.push(g);
    }
    Ok(out)
}

/// Largest relative error between an analytic and a numeric gradient,
/// with the denominator floored to dodge division by ~0.
pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor, floor: f64) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
