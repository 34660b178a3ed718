//! Reverse-mode automatic differentiation over a linear operation tape.
//!
//! Every op appends a node whose inputs were recorded earlier, so the node
//! list is always in topological order and backward is a single reverse sweep.

use std::cell::{Cell, RefCell};
use std::sync::Arc;

use super::kernels::{self, Bcast};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
enum Unary {
    Neg,
    Relu,
    Gelu,
    Sigmoid,
    Tanh,
    Exp,
    Ln,
    Softplus,
    Abs,
    Sin,
    Cos,
    Sqrt,
}

#[derive(Clone, Copy, Debug)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
    Max,
    Min,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary(Binary, usize, usize),
    AddScalar(usize),
    MulScalar(usize, f64),
    Unary(Unary, usize),
    MatMul(usize, usize),
    Bmm { a: usize, b: usize, trans_b: bool },
    Softmax { x: usize, axis: usize },
    LogSoftmax { x: usize, axis: usize },
    LayerNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<f64>, inv_std: Vec<f64> },
    Sum(usize),
    SumAxis { x: usize, axis: usize },
    Reshape(usize),
    Permute { x: usize, perm: Vec<usize> },
    Concat { xs: Vec<usize>, axis: usize },
    Narrow { x: usize, axis: usize, start: usize },
    IndexSelect { x: usize, indices: Vec<usize> },
    Repeat { x: usize, times: usize },
}

struct Node {
    value: Arc<Tensor>,
    requires_grad: bool,
    op: Op,
}

/// Records operations for one forward pass; confined to a single thread.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.shape()).finish()
    }
}

/// Gradients produced by one backward sweep, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros shaped like it when nothing flowed there.
    pub fn get_or_zeros(&self, var: Var<'_>) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(var.value().shape()))
    }

    pub fn take(&mut self, var: Var<'_>) -> Option<Tensor> {
        self.grads.get_mut(var.id).and_then(Option::take)
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::with_capacity(256)), consumed: Cell::new(false) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf that receives gradients.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push_leaf(Arc::new(value), true)
    }

    pub fn leaf_shared(&self, value: Arc<Tensor>, requires_grad: bool) -> Var<'_> {
        self.push_leaf(value, requires_grad)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_leaf(Arc::new(value), false)
    }

    fn push_leaf(&self, value: Arc<Tensor>, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, requires_grad, op: Op::Leaf });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn push(&self, value: Tensor, parents: &[usize], op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = parents.iter().any(|&p| nodes[p].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        nodes.push(Node { value: Arc::new(value), requires_grad, op });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn value(&self, id: usize) -> Arc<Tensor> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat<'t>(&'t self, xs: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = xs.first().ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let values: Vec<Arc<Tensor>> = xs.iter().map(|v| v.value()).collect();
        let base = values[0].shape().to_vec();
        if axis >= base.len() {
            return Err(Error::dim(format!("concat axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for v in &values {
            let s = v.shape();
            if s.len() != base.len()
                || s.iter().enumerate().any(|(i, &d)| i != axis && d != base[i])
            {
                return Err(Error::dim(format!("concat shapes {base:?} and {s:?} disagree")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = kernels::axis_split(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in &values {
                let chunk = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let ids: Vec<usize> = xs.iter().map(|v| v.id).collect();
        let _ = first;
        Ok(self.push(Tensor::from_parts(shape, data), &ids, Op::Concat { xs: ids.clone(), axis }))
    }

    /// Clears the consumed flag so another backward sweep can run.
    pub fn reset(&self) {
        self.consumed.set(false);
    }

    /// Accumulates d(root)/d(node) for every node that requires gradients.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(root.tape, self) {
            return Err(Error::contract("root belongs to a different tape"));
        }
        if self.consumed.get() {
            return Err(Error::State("backward already ran on this tape; call reset first".into()));
        }
        let nodes = self.nodes.borrow();
        if nodes[root.id].value.numel() != 1 {
            return Err(Error::contract(format!(
                "backward root must be scalar, got shape {:?}",
                nodes[root.id].value.shape()
            )));
        }
        self.consumed.set(true);
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[root.id] = Some(vec![1.0]);
        for id in (0..=root.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            backward_node(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(nodes.iter())
            .map(|(g, n)| {
                g.filter(|_| n.requires_grad)
                    .map(|g| Tensor::from_parts(n.value.shape().to_vec(), g))
            })
            .collect();
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, g: Vec<f64>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(&g) {
                *a += b;
            }
        }
        slot => *slot = Some(g),
    }
}

fn backward_node(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let out = &nodes[id].value;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Binary(kind, a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let pa = kernels::bcast_plan(av.shape(), out.shape());
            let pb = kernels::bcast_plan(bv.shape(), out.shape());
            let (ad, bd) = (av.data(), bv.data());
            let n = g.len();
            let (ga, gb): (Vec<f64>, Vec<f64>) = match kind {
                Binary::Add => (g.to_vec(), g.to_vec()),
                Binary::Sub => (g.to_vec(), g.iter().map(|v| -v).collect()),
                Binary::Mul => (
                    (0..n).map(|i| g[i] * bd[pb.src(i)]).collect(),
                    (0..n).map(|i| g[i] * ad[pa.src(i)]).collect(),
                ),
                Binary::Div => (
                    (0..n).map(|i| g[i] / bd[pb.src(i)]).collect(),
                    (0..n)
                        .map(|i| {
                            let y = bd[pb.src(i)];
                            -g[i] * ad[pa.src(i)] / (y * y)
                        })
                        .collect(),
                ),
                Binary::Max | Binary::Min => {
                    let first = |i: usize| {
                        let (x, y) = (ad[pa.src(i)], bd[pb.src(i)]);
                        if matches!(kind, Binary::Max) { x >= y } else { x <= y }
                    };
                    (
                        (0..n).map(|i| if first(i) { g[i] } else { 0.0 }).collect(),
                        (0..n).map(|i| if first(i) { 0.0 } else { g[i] }).collect(),
                    )
                }
            };
            accumulate(grads, nodes, *a, kernels::reduce_to(&ga, &pa, av.numel()));
            accumulate(grads, nodes, *b, kernels::reduce_to(&gb, &pb, bv.numel()));
        }
        Op::AddScalar(x) => accumulate(grads, nodes, *x, g.to_vec()),
        Op::MulScalar(x, c) => accumulate(grads, nodes, *x, g.iter().map(|v| v * c).collect()),
        Op::Unary(kind, x) => {
            let xd = nodes[*x].value.data();
            let yd = out.data();
            let gx: Vec<f64> = match kind {
                Unary::Neg => g.iter().map(|v| -v).collect(),
                Unary::Relu => zip_map(g, xd, |g, x| if x > 0.0 { g } else { 0.0 }),
                Unary::Gelu => zip_map(g, xd, |g, x| g * kernels::gelu_grad(x)),
                Unary::Sigmoid => zip_map(g, yd, |g, y| g * y * (1.0 - y)),
                Unary::Tanh => zip_map(g, yd, |g, y| g * (1.0 - y * y)),
                Unary::Exp => zip_map(g, yd, |g, y| g * y),
                Unary::Ln => zip_map(g, xd, |g, x| g / x),
                Unary::Softplus => zip_map(g, xd, |g, x| g * kernels::sigmoid(x)),
                Unary::Abs => zip_map(g, xd, |g, x| {
                    if x > 0.0 {
                        g
                    } else if x < 0.0 {
                        -g
                    } else {
                        0.0
                    }
                }),
                Unary::Sin => zip_map(g, xd, |g, x| g * x.cos()),
                Unary::Cos => zip_map(g, xd, |g, x| -g * x.sin()),
                Unary::Sqrt => zip_map(g, yd, |g, y| g / (2.0 * y)),
            };
            accumulate(grads, nodes, *x, gx);
        }
        Op::MatMul(a, w) => {
            let (av, wv) = (&nodes[*a].value, &nodes[*w].value);
            let k = *av.shape().last().unwrap();
            let n = wv.shape()[1];
            let rows = av.numel() / k;
            if nodes[*a].requires_grad {
                let mut ga = vec![0.0; rows * k];
                kernels::gemm(rows, n, k, g, false, wv.data(), true, &mut ga, 0.0);
                accumulate(grads, nodes, *a, ga);
            }
            if nodes[*w].requires_grad {
                let mut gw = vec![0.0; k * n];
                kernels::gemm(k, rows, n, av.data(), true, g, false, &mut gw, 0.0);
                accumulate(grads, nodes, *w, gw);
            }
        }
        Op::Bmm { a, b, trans_b } => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (batch, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
            let n = out.shape()[2];
            if nodes[*a].requires_grad {
                let mut ga = vec![0.0; av.numel()];
                for i in 0..batch {
                    let gi = &g[i * m * n..(i + 1) * m * n];
                    let bi = &bv.data()[i * k * n..(i + 1) * k * n];
                    // C = A·B → dA = dC·Bᵀ ; C = A·Bᵀ → dA = dC·B
                    kernels::gemm(m, n, k, gi, false, bi, !trans_b, &mut ga[i * m * k..(i + 1) * m * k], 0.0);
                }
                accumulate(grads, nodes, *a, ga);
            }
            if nodes[*b].requires_grad {
                let mut gb = vec![0.0; bv.numel()];
                for i in 0..batch {
                    let gi = &g[i * m * n..(i + 1) * m * n];
                    let ai = &av.data()[i * m * k..(i + 1) * m * k];
                    let dst = &mut gb[i * k * n..(i + 1) * k * n];
                    if *trans_b {
                        // dB [n×k] = dCᵀ·A
                        kernels::gemm(n, m, k, gi, true, ai, false, dst, 0.0);
                    } else {
                        // dB [k×n] = Aᵀ·dC
                        kernels::gemm(k, m, n, ai, true, gi, false, dst, 0.0);
                    }
                }
                accumulate(grads, nodes, *b, gb);
            }
        }
        Op::Softmax { x, axis } => {
            let (outer, len, inner) = kernels::axis_split(out.shape(), *axis);
            let y = out.data();
            let mut gx = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let dot: f64 = (0..len).map(|j| g[base + j * inner] * y[base + j * inner]).sum();
                    for j in 0..len {
                        let p = base + j * inner;
                        gx[p] = y[p] * (g[p] - dot);
                    }
                }
            }
            accumulate(grads, nodes, *x, gx);
        }
        Op::LogSoftmax { x, axis } => {
            let (outer, len, inner) = kernels::axis_split(out.shape(), *axis);
            let y = out.data();
            let mut gx = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let total: f64 = (0..len).map(|j| g[base + j * inner]).sum();
                    for j in 0..len {
                        let p = base + j * inner;
                        gx[p] = g[p] - y[p].exp() * total;
                    }
                }
            }
            accumulate(grads, nodes, *x, gx);
        }
        Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
            let gam = nodes[*gamma].value.data();
            let d = gam.len();
            let rows = xhat.len() / d;
            if nodes[*x].requires_grad {
                let mut gx = vec![0.0; xhat.len()];
                #[allow(clippy::needless_range_loop)]
                for r in 0..rows {
                    let off = r * d;
                    let mut mean_g = 0.0;
                    let mut mean_gx = 0.0;
                    for j in 0..d {
                        let dxh = g[off + j] * gam[j];
                        mean_g += dxh;
                        mean_gx += dxh * xhat[off + j];
                    }
                    mean_g /= d as f64;
                    mean_gx /= d as f64;
                    for j in 0..d {
                        let dxh = g[off + j] * gam[j];
                        gx[off + j] = inv_std[r] * (dxh - mean_g - xhat[off + j] * mean_gx);
                    }
                }
                accumulate(grads, nodes, *x, gx);
            }
            let mut gg = vec![0.0; d];
            let mut gb = vec![0.0; d];
            for r in 0..rows {
                for j in 0..d {
                    gg[j] += g[r * d + j] * xhat[r * d + j];
                    gb[j] += g[r * d + j];
                }
            }
            accumulate(grads, nodes, *gamma, gg);
            accumulate(grads, nodes, *beta, gb);
        }
        Op::Sum(x) => {
            let n = nodes[*x].value.numel();
            accumulate(grads, nodes, *x, vec![g[0]; n]);
        }
        Op::SumAxis { x, axis } => {
            let xs = nodes[*x].value.shape();
            let (outer, len, inner) = kernels::axis_split(xs, *axis);
            let mut gx = vec![0.0; outer * len * inner];
            for o in 0..outer {
                for j in 0..len {
                    let dst = &mut gx[(o * len + j) * inner..(o * len + j + 1) * inner];
                    dst.copy_from_slice(&g[o * inner..(o + 1) * inner]);
                }
            }
            accumulate(grads, nodes, *x, gx);
        }
        Op::Reshape(x) => accumulate(grads, nodes, *x, g.to_vec()),
        Op::Permute { x, perm } => {
            let inv = kernels::inverse_perm(perm);
            let (_, gx) = kernels::permute(g, out.shape(), &inv);
            accumulate(grads, nodes, *x, gx);
        }
        Op::Concat { xs, axis } => {
            let (outer, total, inner) = kernels::axis_split(out.shape(), *axis);
            let mut offset = 0;
            for &p in xs {
                let len = nodes[p].value.shape()[*axis];
                if nodes[p].requires_grad {
                    let mut gp = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let start = (o * total + offset) * inner;
                        gp.extend_from_slice(&g[start..start + len * inner]);
                    }
                    accumulate(grads, nodes, p, gp);
                }
                offset += len;
            }
        }
        Op::Narrow { x, axis, start } => {
            let xs = nodes[*x].value.shape();
            let (outer, full, inner) = kernels::axis_split(xs, *axis);
            let len = out.shape()[*axis];
            let mut gx = vec![0.0; outer * full * inner];
            for o in 0..outer {
                let dst = (o * full + start) * inner;
                gx[dst..dst + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            accumulate(grads, nodes, *x, gx);
        }
        Op::IndexSelect { x, indices } => {
            let xv = &nodes[*x].value;
            let width = xv.numel() / xv.shape()[0];
            let mut gx = vec![0.0; xv.numel()];
            for (r, &src) in indices.iter().enumerate() {
                for j in 0..width {
                    gx[src * width + j] += g[r * width + j];
                }
            }
            accumulate(grads, nodes, *x, gx);
        }
        Op::Repeat { x, times } => {
            let n = nodes[*x].value.numel();
            let mut gx = vec![0.0; n];
            for t in 0..*times {
                for (a, b) in gx.iter_mut().zip(&g[t * n..(t + 1) * n]) {
                    *a += b;
                }
            }
            accumulate(grads, nodes, *x, gx);
        }
    }
}

fn zip_map(g: &[f64], v: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    g.iter().zip(v).map(|(&g, &v)| f(g, v)).collect()
}

#[allow(clippy::should_implement_trait)]
impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Arc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Scalar value of a one-element node.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    fn binary(self, other: Var<'t>, kind: Binary) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        let shape = kernels::broadcast_shape(a.shape(), b.shape())
            .map_err(|_| Error::dim(format!("{kind:?}: incompatible shapes {:?} and {:?}", a.shape(), b.shape())))?;
        let pa = kernels::bcast_plan(a.shape(), &shape);
        let pb = kernels::bcast_plan(b.shape(), &shape);
        let n: usize = shape.iter().product();
        let (ad, bd) = (a.data(), b.data());
        let f: fn(f64, f64) -> f64 = match kind {
            Binary::Add => |x, y| x + y,
            Binary::Sub => |x, y| x - y,
            Binary::Mul => |x, y| x * y,
            Binary::Div => |x, y| x / y,
            Binary::Max => |x, y| if x >= y { x } else { y },
            Binary::Min => |x, y| if x <= y { x } else { y },
        };
        let data: Vec<f64> = match (&pa, &pb) {
            (Bcast::Same, Bcast::Same) => ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
            _ => (0..n).map(|i| f(ad[pa.src(i)], bd[pb.src(i)])).collect(),
        };
        Ok(self.tape.push(Tensor::from_parts(shape, data), &[self.id, other.id], Op::Binary(kind, self.id, other.id)))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Add)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Sub)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Mul)
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Div)
    }

    /// Elementwise maximum; ties route the gradient to `self`.
    pub fn maximum(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Max)
    }

    /// Elementwise minimum; ties route the gradient to `self`.
    pub fn minimum(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Min)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let v = self.value().map(|x| x + c);
        self.tape.push(v, &[self.id], Op::AddScalar(self.id))
    }

    pub fn mul_scalar(self, c: f64) -> Var<'t> {
        let v = self.value().map(|x| x * c);
        self.tape.push(v, &[self.id], Op::MulScalar(self.id, c))
    }

    fn unary(self, kind: Unary) -> Var<'t> {
        let f: fn(f64) -> f64 = match kind {
            Unary::Neg => |x| -x,
            Unary::Relu => |x| x.max(0.0),
            Unary::Gelu => kernels::gelu,
            Unary::Sigmoid => kernels::sigmoid,
            Unary::Tanh => f64::tanh,
            Unary::Exp => f64::exp,
            Unary::Ln => f64::ln,
            Unary::Softplus => kernels::softplus,
            Unary::Abs => f64::abs,
            Unary::Sin => f64::sin,
            Unary::Cos => f64::cos,
            Unary::Sqrt => f64::sqrt,
        };
        let v = self.value().map(f);
        self.tape.push(v, &[self.id], Op::Unary(kind, self.id))
    }

    pub fn neg(self) -> Var<'t> {
        self.unary(Unary::Neg)
    }
    pub fn relu(self) -> Var<'t> {
        self.unary(Unary::Relu)
    }
    /// Tanh-approximated GELU.
    pub fn gelu(self) -> Var<'t> {
        self.unary(Unary::Gelu)
    }
    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Unary::Sigmoid)
    }
    pub fn tanh(self) -> Var<'t> {
        self.unary(Unary::Tanh)
    }
    pub fn exp(self) -> Var<'t> {
        self.unary(Unary::Exp)
    }
    pub fn ln(self) -> Var<'t> {
        self.unary(Unary::Ln)
    }
    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(self) -> Var<'t> {
        self.unary(Unary::Softplus)
    }
    pub fn abs(self) -> Var<'t> {
        self.unary(Unary::Abs)
    }
    pub fn sin(self) -> Var<'t> {
        self.unary(Unary::Sin)
    }
    pub fn cos(self) -> Var<'t> {
        self.unary(Unary::Cos)
    }
    pub fn sqrt(self) -> Var<'t> {
        self.unary(Unary::Sqrt)
    }

    /// `[..., k] × [k, n] → [..., n]`.
    pub fn matmul(self, w: Var<'t>) -> Result<Var<'t>> {
        let (a, wv) = (self.value(), w.value());
        let k = *a.shape().last().unwrap();
        if wv.ndim() != 2 || wv.shape()[0] != k {
            return Err(Error::dim(format!("matmul: cannot multiply {:?} by {:?}", a.shape(), wv.shape())));
        }
        let n = wv.shape()[1];
        let rows = a.numel() / k;
        let mut data = vec![0.0; rows * n];
        kernels::gemm(rows, k, n, a.data(), false, wv.data(), false, &mut data, 0.0);
        let mut shape = a.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        Ok(self.tape.push(Tensor::from_parts(shape, data), &[self.id, w.id], Op::MatMul(self.id, w.id)))
    }

    /// Batched product `[B,m,k] × [B,k,n]`, or `[B,m,k] × [B,n,k]ᵀ` when `trans_b`.
    pub fn bmm(self, other: Var<'t>, trans_b: bool) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        let mismatch = || Error::dim(format!("bmm: incompatible {:?} and {:?} (trans_b={trans_b})", a.shape(), b.shape()));
        if a.ndim() != 3 || b.ndim() != 3 || a.shape()[0] != b.shape()[0] {
            return Err(mismatch());
        }
        let (batch, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
        let (kb, n) = if trans_b { (b.shape()[2], b.shape()[1]) } else { (b.shape()[1], b.shape()[2]) };
        if kb != k {
            return Err(mismatch());
        }
        let mut data = vec![0.0; batch * m * n];
        for i in 0..batch {
            kernels::gemm(
                m,
                k,
                n,
                &a.data()[i * m * k..(i + 1) * m * k],
                false,
                &b.data()[i * k * n..(i + 1) * k * n],
                trans_b,
                &mut data[i * m * n..(i + 1) * m * n],
                0.0,
            );
        }
        let op = Op::Bmm { a: self.id, b: other.id, trans_b };
        Ok(self.tape.push(Tensor::from_parts(vec![batch, m, n], data), &[self.id, other.id], op))
    }

    fn check_axis(&self, axis: usize, what: &str) -> Result<Vec<usize>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::dim(format!("{what}: axis {axis} invalid for shape {shape:?}")));
        }
        Ok(shape)
    }

    pub fn softmax(self, axis: usize) -> Result<Var<'t>> {
        let shape = self.check_axis(axis, "softmax")?;
        let (outer, len, inner) = kernels::axis_split(&shape, axis);
        let data = kernels::softmax(self.value().data(), outer, len, inner);
        Ok(self.tape.push(Tensor::from_parts(shape, data), &[self.id], Op::Softmax { x: self.id, axis }))
    }

    pub fn log_softmax(self, axis: usize) -> Result<Var<'t>> {
        let shape = self.check_axis(axis, "log_softmax")?;
        let (outer, len, inner) = kernels::axis_split(&shape, axis);
        let x = self.value();
        let xd = x.data();
        let mut data = vec![0.0; xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let max = (0..len).map(|j| xd[base + j * inner]).fold(f64::NEG_INFINITY, f64::max);
                let lse = max + (0..len).map(|j| (xd[base + j * inner] - max).exp()).sum::<f64>().ln();
                for j in 0..len {
                    data[base + j * inner] = xd[base + j * inner] - lse;
                }
            }
        }
        Ok(self.tape.push(Tensor::from_parts(shape, data), &[self.id], Op::LogSoftmax { x: self.id, axis }))
    }

    /// Normalizes over the last axis with epsilon 1e-5, then applies `gamma`/`beta`.
    pub fn layer_norm(self, gamma: Var<'t>, beta: Var<'t>) -> Result<Var<'t>> {
        const EPS: f64 = 1e-5;
        let x = self.value();
        let (gv, bv) = (gamma.value(), beta.value());
        let d = *x.shape().last().unwrap();
        if gv.shape() != [d] || bv.shape() != [d] {
            return Err(Error::dim(format!(
                "layer_norm: width {d} vs gamma {:?} beta {:?}",
                gv.shape(),
                bv.shape()
            )));
        }
        let rows = x.numel() / d;
        let mut xhat = vec![0.0; x.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut data = vec![0.0; x.numel()];
        for r in 0..rows {
            let row = &x.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + EPS).sqrt();
            inv_std[r] = inv;
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[r * d + j] = h;
                data[r * d + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let op = Op::LayerNorm { x: self.id, gamma: gamma.id, beta: beta.id, xhat, inv_std };
        Ok(self.tape.push(Tensor::from_parts(x.shape().to_vec(), data), &[self.id, gamma.id, beta.id], op))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(self) -> Var<'t> {
        let total = self.value().sum();
        self.tape.push(Tensor::scalar(total), &[self.id], Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.value().numel() as f64;
        self.sum().mul_scalar(1.0 / n)
    }

    /// Sums out `axis`; a 1-D input reduces to shape `[1]`.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>> {
        let shape = self.check_axis(axis, "sum_axis")?;
        let (outer, len, inner) = kernels::axis_split(&shape, axis);
        let x = self.value();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let src = &x.data()[(o * len + j) * inner..(o * len + j + 1) * inner];
                for (d, s) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut out_shape: Vec<usize> = shape.iter().enumerate().filter(|&(i, _)| i != axis).map(|(_, &d)| d).collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        Ok(self.tape.push(Tensor::from_parts(out_shape, data), &[self.id], Op::SumAxis { x: self.id, axis }))
    }

    pub fn mean_axis(self, axis: usize) -> Result<Var<'t>> {
        let len = self.check_axis(axis, "mean_axis")?[axis];
        Ok(self.sum_axis(axis)?.mul_scalar(1.0 / len as f64))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        if shape.iter().product::<usize>() != x.numel() || shape.contains(&0) {
            return Err(Error::dim(format!("reshape: {:?} into {shape:?}", x.shape())));
        }
        let v = Tensor::from_parts(shape.to_vec(), x.data().to_vec());
        Ok(self.tape.push(v, &[self.id], Op::Reshape(self.id)))
    }

    pub fn permute(self, perm: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let mut seen = vec![false; x.ndim()];
        if perm.len() != x.ndim() || perm.iter().any(|&p| p >= x.ndim() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::dim(format!("permute: {perm:?} is not a permutation of {:?}", x.shape())));
        }
        let (shape, data) = kernels::permute(x.data(), x.shape(), perm);
        Ok(self.tape.push(Tensor::from_parts(shape, data), &[self.id], Op::Permute { x: self.id, perm: perm.to_vec() }))
    }

    /// Swaps the last two axes.
    pub fn transpose(self) -> Result<Var<'t>> {
        let n = self.shape().len();
        if n < 2 {
            return Err(Error::dim("transpose needs at least 2 axes"));
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.swap(n - 2, n - 1);
        self.permute(&perm)
    }

    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let shape = self.check_axis(axis, "narrow")?;
        if len == 0 || start + len > shape[axis] {
            return Err(Error::dim(format!("narrow: [{start}, {}) outside axis {axis} of {shape:?}", start + len)));
        }
        let (outer, full, inner) = kernels::axis_split(&shape, axis);
        let x = self.value();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = (o * full + start) * inner;
            data.extend_from_slice(&x.data()[s..s + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        Ok(self.tape.push(Tensor::from_parts(out_shape, data), &[self.id], Op::Narrow { x: self.id, axis, start }))
    }

    /// Gathers slices along axis 0.
    pub fn index_select(self, indices: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let rows = x.shape()[0];
        if indices.is_empty() {
            return Err(Error::dim("index_select with no indices"));
        }
        if let Some(bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::dim(format!("index_select: index {bad} >= {rows}")));
        }
        let width = x.numel() / rows;
        let mut data = Vec::with_capacity(indices.len() * width);
        for &i in indices {
            data.extend_from_slice(&x.data()[i * width..(i + 1) * width]);
        }
        let mut shape = x.shape().to_vec();
        shape[0] = indices.len();
        let op = Op::IndexSelect { x: self.id, indices: indices.to_vec() };
        Ok(self.tape.push(Tensor::from_parts(shape, data), &[self.id], op))
    }

    /// Stacks `times` copies along a new leading axis.
    pub fn repeat(self, times: usize) -> Var<'t> {
        let x = self.value();
        let mut data = Vec::with_capacity(x.numel() * times);
        for _ in 0..times {
            data.extend_from_slice(x.data());
        }
        let mut shape = vec![times];
        shape.extend_from_slice(x.shape());
        self.tape.push(Tensor::from_parts(shape, data), &[self.id], Op::Repeat { x: self.id, times })
    }

    /// Same value, cut off from gradient flow.
    pub fn detach(self) -> Var<'t> {
        self.tape.push_leaf(self.value(), false)
    }
}
