//! Minimal reverse-mode differentiation substrate.
//!
//! A [`Graph`] is a tape: ops append nodes in topological order and compute
//! their outputs eagerly in f32. [`Graph::backward`] walks the tape once in
//! reverse, accumulating a gradient tensor for every `requires_grad` node
//! reachable from a scalar loss.
//!
//! Every forward op checks its output for NaN/Inf and fails loudly instead of
//! propagating poison. Reductions (`sum`, `mean`, `logsumexp`) keep the
//! reduced axis as size 1.

pub mod gradcheck;
pub mod kernels;
mod replay;


pub use gradcheck::{grad_check, grad_check_all_leaves, GradCheckOptions};

use crate::error::{Error, Result};
use kernels::Real;

/// Index of a node in its graph; stable for the graph's lifetime.
pub type NodeId = usize;

/// Dense row-major f32 tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    pub requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidShape {
                op: "tensor",
                shape,
                reason: "dimensions must be positive".into(),
            });
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::InvalidShape {
                op: "tensor",
                shape,
                reason: format!("data length {} != shape product {}", data.len(), numel),
            });
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
            requires_grad: false,
        }
    }

    pub fn scalar(v: f32) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
            requires_grad: false,
        }
    }

    /// Builder: mark as a trainable leaf.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f32 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }
}

/// Broadcast pairing for elementwise binary ops.
///
/// Supported: identical shapes, scalar against anything, and a row vector
/// ([d] or [1, d]) against a matrix [n, d]. That covers bias adds, per-row
/// residuals and scalar constants; anything else is a shape error.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Broadcast {
    Same,
    ScalarLhs,
    ScalarRhs,
    RowLhs,
    RowRhs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinKind {
    Add,
    Sub,
    Mul,
}

/// Recorded operation. Output shapes live on the node's value tensor.
#[derive(Clone, Debug)]
pub enum Op {
    Leaf,
    Matmul { a: NodeId, b: NodeId },
    Bin { kind: BinKind, a: NodeId, b: NodeId, bc: Broadcast },
    Scale { input: NodeId, factor: f32 },
    AddScalar { input: NodeId, offset: f32 },
    Softmax { input: NodeId, axis: usize },
    LayerNorm { input: NodeId, axis: usize, eps: f32 },
    Gelu { input: NodeId },
    Log { input: NodeId },
    Sqrt { input: NodeId },
    Reshape { input: NodeId },
    Concat { inputs: Vec<NodeId>, axis: usize },
    Slice { input: NodeId, axis: usize, start: usize, len: usize },
    Mean { input: NodeId, axis: usize },
    Sum { input: NodeId, axis: usize },
    LogSumExp { input: NodeId, axis: usize },
    Attention { q: NodeId, k: NodeId, v: NodeId, heads: usize },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients from one backward pass: node id -> tensor of the node's shape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    /// Gradient for a leaf inserted with `requires_grad`; zeros if the leaf
    /// never influenced the loss.
    pub fn get_or_zeros(&self, id: NodeId, shape: &[usize]) -> Tensor {
        match self.get(id) {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape.to_vec()),
        }
    }
}

/// Reverse-mode tape of eager ops.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    pub(crate) fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id].op
    }

    /// Insert an input node; `t.requires_grad` decides whether backward
    /// produces a gradient for it.
    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Leaf, t)
    }

    /// Insert a non-trainable input.
    pub fn constant(&mut self, mut t: Tensor) -> NodeId {
        t.requires_grad = false;
        self.push(Op::Leaf, t)
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    fn push_checked(&mut self, name: &'static str, op: Op, shape: Vec<usize>, data: Vec<f32>, requires_grad: bool) -> Result<NodeId> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: name });
        }
        let mut t = Tensor::new(shape, data)?;
        t.requires_grad = requires_grad;
        Ok(self.push(op, t))
    }

    fn any_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&id| self.nodes[id].value.requires_grad)
    }

    // ── forward ops ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.any_grad(&[a, b]);
        self.push_checked("matmul", Op::Matmul { a, b }, vec![m, n], out, rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.bin(BinKind::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.bin(BinKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.bin(BinKind::Mul, a, b)
    }

    fn bin(&mut self, kind: BinKind, a: NodeId, b: NodeId) -> Result<NodeId> {
        let name = match kind {
            BinKind::Add => "add",
            BinKind::Sub => "sub",
            BinKind::Mul => "mul",
        };
        let (bc, out_shape) = resolve_broadcast(name, self.value(a).shape(), self.value(b).shape())?;
        let out = apply_bin(
            kind,
            bc,
            self.value(a).data(),
            self.value(b).data(),
            &out_shape,
        );
        let rg = self.any_grad(&[a, b]);
        self.push_checked(name, Op::Bin { kind, a, b, bc }, out_shape, out, rg)
    }

    pub fn scale(&mut self, input: NodeId, factor: f32) -> Result<NodeId> {
        let out: Vec<f32> = self.value(input).data().iter().map(|v| v * factor).collect();
        let shape = self.value(input).shape().to_vec();
        let rg = self.any_grad(&[input]);
        self.push_checked("scale", Op::Scale { input, factor }, shape, out, rg)
    }

    pub fn add_scalar(&mut self, input: NodeId, offset: f32) -> Result<NodeId> {
        let out: Vec<f32> = self.value(input).data().iter().map(|v| v + offset).collect();
        let shape = self.value(input).shape().to_vec();
        let rg = self.any_grad(&[input]);
        self.push_checked("add_scalar", Op::AddScalar { input, offset }, shape, out, rg)
    }

    pub fn softmax(&mut self, input: NodeId, axis: usize) -> Result<NodeId> {
        let t = self.value(input);
        check_axis("softmax", t.shape(), axis)?;
        let out = kernels::softmax_axis(t.data(), t.shape(), axis);
        let shape = t.shape().to_vec();
        let rg = self.any_grad(&[input]);
        self.push_checked("softmax", Op::Softmax { input, axis }, shape, out, rg)
    }

    pub fn layer_norm(&mut self, input: NodeId, axis: usize, eps: f32) -> Result<NodeId> {
        let t = self.value(input);
        check_axis("layer_norm", t.shape(), axis)?;
        if eps <= 0.0 {
            return Err(Error::Config(format!("layer_norm eps must be positive, got {eps}")));
        }
        let out = kernels::layer_norm_axis(t.data(), t.shape(), axis, eps as f64);
        let shape = t.shape().to_vec();
        let rg = self.any_grad(&[input]);
        self.push_checked("layer_norm", Op::LayerNorm { input, axis, eps }, shape, out, rg)
    }

    pub fn gelu(&mut self, input: NodeId) -> Result<NodeId> {
        let out = kernels::gelu(self.value(input).data());
        let shape = self.value(input).shape().to_vec();
        let rg = self.any_grad(&[input]);
        self.push_checked("gelu", Op::Gelu { input }, shape, out, rg)
    }

    /// Elementwise log with the -1e9 log-space floor (log 0 is finite).
    pub fn log(&mut self, input: NodeId) -> Result<NodeId> {
        let out = kernels::log_floored(self.value(input).data());
        let shape = self.value(input).shape().to_vec();
        let rg = self.any_grad(&[input]);
        self.push_checked("log", Op::Log { input }, shape, out, rg)
    }

    pub fn sqrt(&mut self, input: NodeId) -> Result<NodeId> {
        let out = kernels::sqrt_clamped(self.value(input).data());
        let shape = self.value(input).shape().to_vec();
        let rg = self.any_grad(&[input]);
        self.push_checked("sqrt", Op::Sqrt { input }, shape, out, rg)
    }

    pub fn reshape(&mut self, input: NodeId, new_shape: Vec<usize>) -> Result<NodeId> {
        let t = self.value(input);
        let numel: usize = new_shape.iter().product();
        if new_shape.iter().any(|&d| d == 0) || numel != t.numel() {
            return Err(Error::InvalidShape {
                op: "reshape",
                shape: new_shape,
                reason: format!("incompatible with {} elements", t.numel()),
            });
        }
        let data = t.data().to_vec();
        let rg = self.any_grad(&[input]);
        self.push_checked("reshape", Op::Reshape { input }, new_shape, data, rg)
    }

    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId> {
        if inputs.is_empty() {
            return Err(Error::InvalidShape {
                op: "concat",
                shape: vec![],
                reason: "no inputs".into(),
            });
        }
        let first = self.value(inputs[0]).shape().to_vec();
        check_axis("concat", &first, axis)?;
        for &id in &inputs[1..] {
            let s = self.value(id).shape();
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first,
                    rhs: s.to_vec(),
                });
            }
        }
        let parts: Vec<&[f32]> = inputs.iter().map(|&id| self.value(id).data()).collect();
        let shapes: Vec<&[usize]> = inputs.iter().map(|&id| self.value(id).shape()).collect();
        let out = kernels::concat_axis(&parts, &shapes, axis);
        let mut shape = first.clone();
        shape[axis] = inputs.iter().map(|&id| self.value(id).shape()[axis]).sum();
        let rg = self.any_grad(inputs);
        self.push_checked(
            "concat",
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            shape,
            out,
            rg,
        )
    }

    pub fn slice(&mut self, input: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let t = self.value(input);
        check_axis("slice", t.shape(), axis)?;
        if len == 0 || start + len > t.shape()[axis] {
            return Err(Error::InvalidShape {
                op: "slice",
                shape: t.shape().to_vec(),
                reason: format!("range {start}..{} out of bounds on axis {axis}", start + len),
            });
        }
        let out = kernels::slice_axis(t.data(), t.shape(), axis, start, len);
        let mut shape = t.shape().to_vec();
        shape[axis] = len;
        let rg = self.any_grad(&[input]);
        self.push_checked("slice", Op::Slice { input, axis, start, len }, shape, out, rg)
    }

    pub fn mean(&mut self, input: NodeId, axis: usize) -> Result<NodeId> {
        self.reduce(input, axis, true)
    }

    pub fn sum(&mut self, input: NodeId, axis: usize) -> Result<NodeId> {
        self.reduce(input, axis, false)
    }

    fn reduce(&mut self, input: NodeId, axis: usize, is_mean: bool) -> Result<NodeId> {
        let name = if is_mean { "mean" } else { "sum" };
        let t = self.value(input);
        check_axis(name, t.shape(), axis)?;
        let out = kernels::reduce_axis(t.data(), t.shape(), axis, is_mean);
        let mut shape = t.shape().to_vec();
        shape[axis] = 1;
        let rg = self.any_grad(&[input]);
        let op = if is_mean {
            Op::Mean { input, axis }
        } else {
            Op::Sum { input, axis }
        };
        self.push_checked(name, op, shape, out, rg)
    }

    pub fn logsumexp(&mut self, input: NodeId, axis: usize) -> Result<NodeId> {
        let t = self.value(input);
        check_axis("logsumexp", t.shape(), axis)?;
        let out = kernels::logsumexp_axis(t.data(), t.shape(), axis);
        let mut shape = t.shape().to_vec();
        shape[axis] = 1;
        let rg = self.any_grad(&[input]);
        self.push_checked("logsumexp", Op::LogSumExp { input, axis }, shape, out, rg)
    }

    /// Multi-head scaled dot-product attention. q: [nq, d], k/v: [nk, d].
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId, heads: usize) -> Result<NodeId> {
        let (sq, sk, sv) = (
            self.value(q).shape().to_vec(),
            self.value(k).shape().to_vec(),
            self.value(v).shape().to_vec(),
        );
        if sq.len() != 2 || sk.len() != 2 || sq[1] != sk[1] {
            return Err(Error::ShapeMismatch {
                op: "attention",
                lhs: sq,
                rhs: sk,
            });
        }
        if sk != sv {
            return Err(Error::ShapeMismatch {
                op: "attention",
                lhs: sk,
                rhs: sv,
            });
        }
        let d = sq[1];
        if heads == 0 || d % heads != 0 {
            return Err(Error::InvalidShape {
                op: "attention",
                shape: sq,
                reason: format!("feature dim {d} not divisible by {heads} heads"),
            });
        }
        let (nq, nk) = (sq[0], sk[0]);
        let out = kernels::attention(
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            nq,
            nk,
            d,
            heads,
        );
        let rg = self.any_grad(&[q, k, v]);
        self.push_checked("attention", Op::Attention { q, k, v, heads }, vec![nq, d], out, rg)
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Returns a gradient per
    /// `requires_grad` node reachable from the loss.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::InvalidShape {
                op: "backward",
                shape: lt.shape().to_vec(),
                reason: "loss must be scalar".into(),
            });
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[loss] = Some(vec![1.0]);

        for id in (0..=loss).rev() {
            if grads[id].is_none() || !self.nodes[id].value.requires_grad {
                continue;
            }
            let dout = grads[id].take();
            let dout = dout.unwrap();
            self.backward_op(id, &dout, &mut grads);
            grads[id] = Some(dout);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(id, g)| {
                g.filter(|_| self.nodes[id].value.requires_grad).map(|data| {
                    let mut t = Tensor::new(self.nodes[id].value.shape().to_vec(), data)
                        .expect("gradient shape matches node");
                    t.requires_grad = false;
                    t
                })
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f32>>], id: NodeId, contribution: &[f32]) {
        if !self.nodes[id].value.requires_grad {
            return;
        }
        match &mut grads[id] {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contribution) {
                    *gi += ci;
                }
            }
            None => grads[id] = Some(contribution.to_vec()),
        }
    }

    fn backward_op(&self, id: NodeId, dout: &[f32], grads: &mut [Option<Vec<f32>>]) {
        match &self.nodes[id].op {
            Op::Leaf => {}

            Op::Matmul { a, b } => {
                let (sa, sb) = (self.value(*a).shape(), self.value(*b).shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.value(*a).requires_grad {
                    // dA = dC @ Bᵀ
                    let mut da = vec![0.0f32; m * k];
                    f32::gemm(m, n, k, dout, false, self.value(*b).data(), true, &mut da);
                    self.accumulate(grads, *a, &da);
                }
                if self.value(*b).requires_grad {
                    // dB = Aᵀ @ dC
                    let mut db = vec![0.0f32; k * n];
                    f32::gemm(k, m, n, self.value(*a).data(), true, dout, false, &mut db);
                    self.accumulate(grads, *b, &db);
                }
            }

            Op::Bin { kind, a, b, bc } => {
                let (da, db) = bin_backward(
                    *kind,
                    *bc,
                    self.value(*a).data(),
                    self.value(*b).data(),
                    dout,
                );
                self.accumulate(grads, *a, &da);
                self.accumulate(grads, *b, &db);
            }

            Op::Scale { input, factor } => {
                let d: Vec<f32> = dout.iter().map(|g| g * factor).collect();
                self.accumulate(grads, *input, &d);
            }

            Op::AddScalar { input, .. } => {
                self.accumulate(grads, *input, dout);
            }

            Op::Softmax { input, axis } => {
                let y = self.nodes[id].value.data();
                let shape = self.nodes[id].value.shape();
                let d = softmax_backward(y, dout, shape, *axis);
                self.accumulate(grads, *input, &d);
            }

            Op::LayerNorm { input, axis, eps } => {
                let x = self.value(*input);
                let d = layer_norm_backward(x.data(), dout, x.shape(), *axis, *eps);
                self.accumulate(grads, *input, &d);
            }

            Op::Gelu { input } => {
                let g = kernels::gelu_grad(self.value(*input).data());
                let d: Vec<f32> = g.iter().zip(dout).map(|(gi, di)| gi * di).collect();
                self.accumulate(grads, *input, &d);
            }

            Op::Log { input } => {
                // Flat (zero) gradient inside the floored region x <= 0.
                let d: Vec<f32> = self
                    .value(*input)
                    .data()
                    .iter()
                    .zip(dout)
                    .map(|(&x, &di)| if x > 0.0 { di / x } else { 0.0 })
                    .collect();
                self.accumulate(grads, *input, &d);
            }

            Op::Sqrt { input } => {
                let y = self.nodes[id].value.data();
                let d: Vec<f32> = y
                    .iter()
                    .zip(dout)
                    .map(|(&yi, &di)| if yi > 1e-12 { di * 0.5 / yi } else { 0.0 })
                    .collect();
                self.accumulate(grads, *input, &d);
            }

            Op::Reshape { input } => {
                self.accumulate(grads, *input, dout);
            }

            Op::Concat { inputs, axis } => {
                let out_shape = self.nodes[id].value.shape();
                let (outer, total_len, inner) = kernels::lanes(out_shape, *axis);
                let mut offset = 0;
                for &inp in inputs {
                    let len = self.value(inp).shape()[*axis];
                    if self.value(inp).requires_grad {
                        let mut d = vec![0.0f32; outer * len * inner];
                        for o in 0..outer {
                            for a in 0..len {
                                let src = (o * total_len + offset + a) * inner;
                                let dst = (o * len + a) * inner;
                                d[dst..dst + inner].copy_from_slice(&dout[src..src + inner]);
                            }
                        }
                        self.accumulate(grads, inp, &d);
                    }
                    offset += len;
                }
            }

            Op::Slice { input, axis, start, len } => {
                let in_shape = self.value(*input).shape();
                let (outer, full, inner) = kernels::lanes(in_shape, *axis);
                let mut d = vec![0.0f32; self.value(*input).numel()];
                for o in 0..outer {
                    for a in 0..*len {
                        let dst = (o * full + start + a) * inner;
                        let src = (o * len + a) * inner;
                        d[dst..dst + inner].copy_from_slice(&dout[src..src + inner]);
                    }
                }
                self.accumulate(grads, *input, &d);
            }

            Op::Mean { input, axis } | Op::Sum { input, axis } => {
                let is_mean = matches!(self.nodes[id].op, Op::Mean { .. });
                let in_shape = self.value(*input).shape();
                let (outer, len, inner) = kernels::lanes(in_shape, *axis);
                let scale = if is_mean { 1.0 / len as f32 } else { 1.0 };
                let mut d = vec![0.0f32; self.value(*input).numel()];
                for o in 0..outer {
                    for a in 0..len {
                        for i in 0..inner {
                            d[(o * len + a) * inner + i] = dout[o * inner + i] * scale;
                        }
                    }
                }
                self.accumulate(grads, *input, &d);
            }

            Op::LogSumExp { input, axis } => {
                // d/dx logsumexp = softmax(x), times upstream (broadcast over axis).
                let x = self.value(*input);
                let lse = self.nodes[id].value.data();
                let (outer, len, inner) = kernels::lanes(x.shape(), *axis);
                let mut d = vec![0.0f32; x.numel()];
                for o in 0..outer {
                    for a in 0..len {
                        for i in 0..inner {
                            let idx = (o * len + a) * inner + i;
                            let p = (x.data()[idx] - lse[o * inner + i]).exp();
                            d[idx] = p * dout[o * inner + i];
                        }
                    }
                }
                self.accumulate(grads, *input, &d);
            }

            Op::Attention { q, k, v, heads } => {
                let (dq, dk, dv) = attention_backward(
                    self.value(*q).data(),
                    self.value(*k).data(),
                    self.value(*v).data(),
                    dout,
                    self.value(*q).shape()[0],
                    self.value(*k).shape()[0],
                    self.value(*q).shape()[1],
                    *heads,
                );
                self.accumulate(grads, *q, &dq);
                self.accumulate(grads, *k, &dk);
                self.accumulate(grads, *v, &dv);
            }
        }
    }
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::InvalidShape {
            op,
            shape: shape.to_vec(),
            reason: format!("axis {axis} out of range"),
        });
    }
    Ok(())
}

pub(crate) fn resolve_broadcast(op: &'static str, a: &[usize], b: &[usize]) -> Result<(Broadcast, Vec<usize>)> {
    let numel = |s: &[usize]| s.iter().product::<usize>();
    if a == b {
        return Ok((Broadcast::Same, a.to_vec()));
    }
    if numel(b) == 1 {
        return Ok((Broadcast::ScalarRhs, a.to_vec()));
    }
    if numel(a) == 1 {
        return Ok((Broadcast::ScalarLhs, b.to_vec()));
    }
    let row_of = |m: &[usize], r: &[usize]| {
        m.len() == 2 && (r == [m[1]] || (r.len() == 2 && r[0] == 1 && r[1] == m[1]))
    };
    if row_of(a, b) {
        return Ok((Broadcast::RowRhs, a.to_vec()));
    }
    if row_of(b, a) {
        return Ok((Broadcast::RowLhs, b.to_vec()));
    }
    Err(Error::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    })
}

pub(crate) fn apply_bin_generic<F: Real>(kind: BinKind, bc: Broadcast, a: &[F], b: &[F], out_shape: &[usize]) -> Vec<F> {
    let f = |x: F, y: F| match kind {
        BinKind::Add => x + y,
        BinKind::Sub => x - y,
        BinKind::Mul => x * y,
    };
    let numel: usize = out_shape.iter().product();
    let d = *out_shape.last().unwrap_or(&1);
    match bc {
        Broadcast::Same => a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect(),
        Broadcast::ScalarRhs => a.iter().map(|&x| f(x, b[0])).collect(),
        Broadcast::ScalarLhs => b.iter().map(|&y| f(a[0], y)).collect(),
        Broadcast::RowRhs => (0..numel).map(|i| f(a[i], b[i % d])).collect(),
        Broadcast::RowLhs => (0..numel).map(|i| f(a[i % d], b[i])).collect(),
    }
}

fn apply_bin(kind: BinKind, bc: Broadcast, a: &[f32], b: &[f32], out_shape: &[usize]) -> Vec<f32> {
    apply_bin_generic(kind, bc, a, b, out_shape)
}

/// Gradients of an elementwise binary op, reducing over broadcast dims.
fn bin_backward(kind: BinKind, bc: Broadcast, a: &[f32], b: &[f32], dout: &[f32]) -> (Vec<f32>, Vec<f32>) {
    // Upstream gradient as seen by each operand before broadcast reduction.
    let da_full: Vec<f32> = match kind {
        BinKind::Add | BinKind::Sub => dout.to_vec(),
        BinKind::Mul => match bc {
            Broadcast::Same => dout.iter().zip(b).map(|(d, y)| d * y).collect(),
            Broadcast::ScalarRhs => dout.iter().map(|d| d * b[0]).collect(),
            Broadcast::ScalarLhs | Broadcast::RowLhs => dout.iter().zip(b).map(|(d, y)| d * y).collect(),
            Broadcast::RowRhs => {
                let w = b.len();
                dout.iter().enumerate().map(|(i, d)| d * b[i % w]).collect()
            }
        },
    };
    let sign = if kind == BinKind::Sub { -1.0 } else { 1.0 };
    let db_full: Vec<f32> = match kind {
        BinKind::Add | BinKind::Sub => dout.iter().map(|d| d * sign).collect(),
        BinKind::Mul => match bc {
            Broadcast::Same => dout.iter().zip(a).map(|(d, x)| d * x).collect(),
            Broadcast::ScalarLhs => dout.iter().map(|d| d * a[0]).collect(),
            Broadcast::ScalarRhs | Broadcast::RowRhs => dout.iter().zip(a).map(|(d, x)| d * x).collect(),
            Broadcast::RowLhs => {
                let w = a.len();
                dout.iter().enumerate().map(|(i, d)| d * a[i % w]).collect()
            }
        },
    };
    let da = reduce_to_operand(bc, true, da_full, a.len());
    let db = reduce_to_operand(bc, false, db_full, b.len());
    (da, db)
}

/// Sum a full-shaped gradient down to the (possibly broadcast) operand size.
fn reduce_to_operand(bc: Broadcast, is_lhs: bool, full: Vec<f32>, operand_len: usize) -> Vec<f32> {
    let broadcasted = matches!(
        (bc, is_lhs),
        (Broadcast::ScalarLhs, true)
            | (Broadcast::ScalarRhs, false)
            | (Broadcast::RowLhs, true)
            | (Broadcast::RowRhs, false)
    );
    if !broadcasted {
        return full;
    }
    let mut out = vec![0.0f32; operand_len];
    if operand_len == 1 {
        out[0] = full.iter().sum();
    } else {
        for (i, v) in full.iter().enumerate() {
            out[i % operand_len] += v;
        }
    }
    out
}

fn softmax_backward(y: &[f32], dout: &[f32], shape: &[usize], axis: usize) -> Vec<f32> {
    let (outer, len, inner) = kernels::lanes(shape, axis);
    let mut d = vec![0.0f32; y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let mut dot = 0.0f32;
            for a in 0..len {
                let idx = (o * len + a) * inner + i;
                dot += dout[idx] * y[idx];
            }
            for a in 0..len {
                let idx = (o * len + a) * inner + i;
                d[idx] = y[idx] * (dout[idx] - dot);
            }
        }
    }
    d
}

fn layer_norm_backward(x: &[f32], dout: &[f32], shape: &[usize], axis: usize, eps: f32) -> Vec<f32> {
    let (outer, len, inner) = kernels::lanes(shape, axis);
    let n = len as f32;
    let mut d = vec![0.0f32; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |a: usize| (o * len + a) * inner + i;
            let mut mean = 0.0f32;
            for a in 0..len {
                mean += x[at(a)];
            }
            mean /= n;
            let mut var = 0.0f32;
            for a in 0..len {
                let dv = x[at(a)] - mean;
                var += dv * dv;
            }
            var /= n;
            let inv = 1.0 / (var + eps).sqrt();
            let mut mean_dy = 0.0f32;
            let mut mean_dy_xhat = 0.0f32;
            for a in 0..len {
                let xhat = (x[at(a)] - mean) * inv;
                mean_dy += dout[at(a)];
                mean_dy_xhat += dout[at(a)] * xhat;
            }
            mean_dy /= n;
            mean_dy_xhat /= n;
            for a in 0..len {
                let xhat = (x[at(a)] - mean) * inv;
                d[at(a)] = inv * (dout[at(a)] - mean_dy - xhat * mean_dy_xhat);
            }
        }
    }
    d
}

#[allow(clippy::too_many_arguments)]
fn attention_backward(
    q: &[f32],
    k: &[f32],
    v: &[f32],
    dout: &[f32],
    nq: usize,
    nk: usize,
    d: usize,
    heads: usize,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f32).sqrt();
    let mut dq = vec![0.0f32; nq * d];
    let mut dk = vec![0.0f32; nk * d];
    let mut dv = vec![0.0f32; nk * d];
    let mut qh = vec![0.0f32; nq * dh];
    let mut kh = vec![0.0f32; nk * dh];
    let mut vh = vec![0.0f32; nk * dh];
    let mut doh = vec![0.0f32; nq * dh];
    for h in 0..heads {
        kernels::copy_head_block(q, &mut qh, nq, d, h * dh, dh);
        kernels::copy_head_block(k, &mut kh, nk, d, h * dh, dh);
        kernels::copy_head_block(v, &mut vh, nk, d, h * dh, dh);
        kernels::copy_head_block(dout, &mut doh, nq, d, h * dh, dh);

        // Recompute probs for this head (cheap relative to the projections).
        let mut scores = vec![0.0f32; nq * nk];
        f32::gemm(nq, dh, nk, &qh, false, &kh, true, &mut scores);
        for s in scores.iter_mut() {
            *s *= scale;
        }
        let probs = kernels::softmax_axis(&scores, &[nq, nk], 1);

        // dV = Pᵀ dO
        let mut dvh = vec![0.0f32; nk * dh];
        f32::gemm(nk, nq, dh, &probs, true, &doh, false, &mut dvh);
        // dP = dO Vᵀ
        let mut dp = vec![0.0f32; nq * nk];
        f32::gemm(nq, dh, nk, &doh, false, &vh, true, &mut dp);
        // dS = softmax-backward(P, dP) * scale
        let mut ds = softmax_backward(&probs, &dp, &[nq, nk], 1);
        for s in ds.iter_mut() {
            *s *= scale;
        }
        // dQ = dS K, dK = dSᵀ Q
        let mut dqh = vec![0.0f32; nq * dh];
        f32::gemm(nq, nk, dh, &ds, false, &kh, false, &mut dqh);
        let mut dkh = vec![0.0f32; nk * dh];
        f32::gemm(nk, nq, dh, &ds, true, &qh, false, &mut dkh);

        kernels::write_head_block(&dqh, &mut dq, nq, d, h * dh, dh);
        kernels::write_head_block(&dkh, &mut dk, nk, d, h * dh, dh);
        kernels::write_head_block(&dvh, &mut dv, nk, d, h * dh, dh);
    }
    (dq, dk, dv)
}
