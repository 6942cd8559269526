//! Reverse-mode automatic differentiation over an append-only tape.
//!
//! Every primitive application appends one node holding its output value and
//! whatever the backward rule needs. Nodes only reference earlier nodes, so a
//! single reverse sweep from the root visits each node once in topological
//! order.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::Tensor;
use crate::error::{invalid, Error, Result};

/// Lower clamp applied inside `log`.
pub const LOG_CLAMP: f64 = 1e-12;
/// Variance offset inside `layer_norm`.
pub const LAYER_NORM_EPS: f64 = 1e-12;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

/// The primitive set understood by the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Primitive {
    MatMul,
    Add,
    Sub,
    Mul,
    Concat,
    Slice,
    GatherRows,
    Reshape,
    Transpose,
    Softmax,
    Sigmoid,
    Tanh,
    Relu,
    Sin,
    Log,
    Sum,
    Mean,
    Scale,
    LayerNorm,
}

impl Primitive {
    pub const ALL: [Primitive; 19] = [
        Primitive::MatMul,
        Primitive::Add,
        Primitive::Sub,
        Primitive::Mul,
        Primitive::Concat,
        Primitive::Slice,
        Primitive::GatherRows,
        Primitive::Reshape,
        Primitive::Transpose,
        Primitive::Softmax,
        Primitive::Sigmoid,
        Primitive::Tanh,
        Primitive::Relu,
        Primitive::Sin,
        Primitive::Log,
        Primitive::Sum,
        Primitive::Mean,
        Primitive::Scale,
        Primitive::LayerNorm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Concat => "concat",
            Primitive::Slice => "slice",
            Primitive::GatherRows => "gather_rows",
            Primitive::Reshape => "reshape",
            Primitive::Transpose => "transpose",
            Primitive::Softmax => "softmax",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Tanh => "tanh",
            Primitive::Relu => "relu",
            Primitive::Sin => "sin",
            Primitive::Log => "log",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
            Primitive::Scale => "scale",
            Primitive::LayerNorm => "layer_norm",
        }
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize, transpose_b: bool },
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Concat(Vec<usize>),
    Slice { input: usize, start: usize },
    GatherRows { input: usize, index: Vec<usize> },
    Reshape(usize),
    Softmax(usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Sin(usize),
    Log(usize),
    Sum(usize),
    Mean(usize),
    Scale(usize, f64),
    LayerNorm { input: usize, inv_std: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Single-owner recording of a forward computation.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.tape, self.id, "variable belongs to another tape");
        &self.nodes[v.index].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    fn node(&self, v: Var) -> &Node {
        assert_eq!(v.tape, self.id, "variable belongs to another tape");
        &self.nodes[v.index]
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var { tape: self.id, index }
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.node(v).requires_grad)
    }

    fn check_owned(&self, vars: &[Var]) -> Result<()> {
        match vars.iter().find(|v| v.tape != self.id) {
            Some(_) => Err(invalid!("variable recorded on a different tape")),
            None => Ok(()),
        }
    }

    /// Matrix product of two rank-2 tensors: `[n, k] x [k, m] -> [n, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` without materializing the transpose: `[n, k] x [m, k] -> [n, m]`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        self.check_owned(&[a, b])?;
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let mismatch = || Error::Shape {
            op: Primitive::MatMul.name(),
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() != 2 || sb.len() != 2 {
            return Err(mismatch());
        }
        let (n, k) = (sa[0], sa[1]);
        let (m, kb) = if transpose_b { (sb[0], sb[1]) } else { (sb[1], sb[0]) };
        if k != kb {
            return Err(mismatch());
        }
        let mut out = vec![0.0; n * m];
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        if transpose_b {
            matmul_nt(av, bv, n, k, m, &mut out);
        } else {
            matmul_nn(av, bv, n, k, m, &mut out);
        }
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(
            Tensor::new(vec![n, m], out)?,
            Op::MatMul {
                a: a.index,
                b: b.index,
                transpose_b,
            },
            rg,
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.check_owned(&[a])?;
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(Error::Shape {
                op: Primitive::Transpose.name(),
                lhs: s,
                rhs: vec![],
            });
        }
        let (r, c) = (s[0], s[1]);
        let src = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.any_grad(&[a]);
        Ok(self.push(Tensor::new(vec![c, r], out)?, Op::Transpose(a.index), rg))
    }

    /// Checks that `b` either matches `a` or is a single row broadcast over
    /// the rows of `a`.
    fn broadcast_check(&self, p: Primitive, a: Var, b: Var) -> Result<bool> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            return Ok(false);
        }
        let row_like = match sb.len() {
            1 => true,
            2 => sb[0] == 1,
            _ => false,
        };
        if row_like && !sa.is_empty() && sb[sb.len() - 1] == sa[sa.len() - 1] {
            Ok(true)
        } else {
            Err(Error::Shape {
                op: p.name(),
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            })
        }
    }

    fn elementwise(&mut self, p: Primitive, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.check_owned(&[a, b])?;
        self.broadcast_check(p, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let cols = tb.numel();
        let out: Vec<f64> = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, tb.data()[i % cols]))
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        let op = match p {
            Primitive::Add => Op::Add(a.index, b.index),
            Primitive::Sub => Op::Sub(a.index, b.index),
            Primitive::Mul => Op::Mul(a.index, b.index),
            _ => unreachable!("not a binary elementwise primitive"),
        };
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    /// `a + b`; `b` may be a row broadcast over the rows of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Primitive::Add, a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Primitive::Sub, a, b, |x, y| x - y)
    }

    /// Elementwise (Hadamard) product with the same broadcast rule as `add`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Primitive::Mul, a, b, |x, y| x * y)
    }

    /// Concatenation along the last axis. All inputs share leading axes.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.check_owned(parts)?;
        let Some(&first) = parts.first() else {
            return Err(invalid!("concat of zero tensors"));
        };
        let lead = {
            let s = self.shape(first);
            s[..s.len().saturating_sub(1)].to_vec()
        };
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(Error::Shape {
                    op: Primitive::Concat.name(),
                    lhs: self.shape(first).to_vec(),
                    rhs: s.to_vec(),
                });
            }
        }
        let rows = self.value(first).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let mut shape = lead;
        shape.push(total);
        let rg = self.any_grad(parts);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Concat(parts.iter().map(|v| v.index).collect()),
            rg,
        ))
    }

    /// Columns `start..end` of the last axis.
    pub fn slice(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        self.check_owned(&[a])?;
        let t = self.value(a);
        if start >= end || end > t.cols() || t.shape().is_empty() {
            return Err(Error::Shape {
                op: Primitive::Slice.name(),
                lhs: t.shape().to_vec(),
                rhs: vec![start, end],
            });
        }
        let mut out = Vec::with_capacity(t.rows() * (end - start));
        for r in 0..t.rows() {
            out.extend_from_slice(&t.row(r)[start..end]);
        }
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = end - start;
        let rg = self.any_grad(&[a]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Slice { input: a.index, start }, rg))
    }

    /// Row lookup into a rank-2 table: `[r, c]` indexed by `k` rows gives `[k, c]`.
    pub fn gather_rows(&mut self, table: Var, index: &[usize]) -> Result<Var> {
        self.check_owned(&[table])?;
        let t = self.value(table);
        if t.shape().len() != 2 || index.is_empty() || index.iter().any(|&i| i >= t.shape()[0]) {
            return Err(Error::Shape {
                op: Primitive::GatherRows.name(),
                lhs: t.shape().to_vec(),
                rhs: vec![index.len(), index.iter().copied().max().unwrap_or(0)],
            });
        }
        let c = t.cols();
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in index {
            out.extend_from_slice(t.row(i));
        }
        let rg = self.any_grad(&[table]);
        Ok(self.push(
            Tensor::new(vec![index.len(), c], out)?,
            Op::GatherRows {
                input: table.index,
                index: index.to_vec(),
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.check_owned(&[a])?;
        let value = self.value(a).reshaped(shape.to_vec()).map_err(|_| Error::Shape {
            op: Primitive::Reshape.name(),
            lhs: self.shape(a).to_vec(),
            rhs: shape.to_vec(),
        })?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::Reshape(a.index), rg))
    }

    /// Numerically stable softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.check_owned(&[a])?;
        let t = self.value(a);
        let c = t.cols();
        let mut out = Vec::with_capacity(t.numel());
        for r in 0..t.rows() {
            out.extend(softmax_row(t.row(r)));
        }
        debug_assert_eq!(out.len() % c, 0);
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::Softmax(a.index), rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        self.check_owned(&[a])?;
        let value = self.value(a).map(f);
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, op, rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, sigmoid, Op::Sigmoid(a.index))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::tanh, Op::Tanh(a.index))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x.max(0.0), Op::Relu(a.index))
    }

    pub fn sin(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::sin, Op::Sin(a.index))
    }

    /// Natural log with the input clamped below at [`LOG_CLAMP`].
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x.max(LOG_CLAMP).ln(), Op::Log(a.index))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.unary(a, |x| x * factor, Op::Scale(a.index, factor))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check_owned(&[a])?;
        let s = self.value(a).data().iter().sum();
        let rg = self.any_grad(&[a]);
        Ok(self.push(Tensor::scalar(s), Op::Sum(a.index), rg))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.check_owned(&[a])?;
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        let rg = self.any_grad(&[a]);
        Ok(self.push(Tensor::scalar(s), Op::Mean(a.index), rg))
    }

    /// Per-row standardization over the last axis (no affine part).
    pub fn layer_norm(&mut self, a: Var) -> Result<Var> {
        self.check_owned(&[a])?;
        let t = self.value(a);
        let c = t.cols();
        let mut out = Vec::with_capacity(t.numel());
        let mut inv_std = Vec::with_capacity(t.rows());
        for r in 0..t.rows() {
            let row = t.row(r);
            let mu = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(s);
            out.extend(row.iter().map(|x| (x - mu) * s));
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(
            value,
            Op::LayerNorm {
                input: a.index,
                inv_std,
            },
            rg,
        ))
    }

    /// Applies a primitive by id. Used by generic tooling such as the
    /// per-primitive gradient checks; model code calls the typed methods.
    pub fn apply(&mut self, p: Primitive, inputs: &[Var]) -> Result<Var> {
        let need = |n: usize| -> Result<()> {
            if inputs.len() == n {
                Ok(())
            } else {
                Err(invalid!("{p} takes {n} inputs, got {}", inputs.len()))
            }
        };
        match p {
            Primitive::MatMul => {
                need(2)?;
                self.matmul(inputs[0], inputs[1])
            }
            Primitive::Add => {
                need(2)?;
                self.add(inputs[0], inputs[1])
            }
            Primitive::Sub => {
                need(2)?;
                self.sub(inputs[0], inputs[1])
            }
            Primitive::Mul => {
                need(2)?;
                self.mul(inputs[0], inputs[1])
            }
            Primitive::Concat => self.concat(inputs),
            Primitive::Slice => {
                need(1)?;
                let c = self.value(inputs[0]).cols();
                self.slice(inputs[0], c / 2, c)
            }
            Primitive::GatherRows => {
                need(1)?;
                let r = self.value(inputs[0]).rows();
                let index: Vec<usize> = (0..r).rev().chain(0..r).collect();
                self.gather_rows(inputs[0], &index)
            }
            Primitive::Reshape => {
                need(1)?;
                let n = self.value(inputs[0]).numel();
                self.reshape(inputs[0], &[n])
            }
            Primitive::Transpose => {
                need(1)?;
                self.transpose(inputs[0])
            }
            Primitive::Softmax => {
                need(1)?;
                self.softmax(inputs[0])
            }
            Primitive::Sigmoid => {
                need(1)?;
                self.sigmoid(inputs[0])
            }
            Primitive::Tanh => {
                need(1)?;
                self.tanh(inputs[0])
            }
            Primitive::Relu => {
                need(1)?;
                self.relu(inputs[0])
            }
            Primitive::Sin => {
                need(1)?;
                self.sin(inputs[0])
            }
            Primitive::Log => {
                need(1)?;
                self.log(inputs[0])
            }
            Primitive::Sum => {
                need(1)?;
                self.sum(inputs[0])
            }
            Primitive::Mean => {
                need(1)?;
                self.mean(inputs[0])
            }
            Primitive::Scale => {
                need(1)?;
                self.scale(inputs[0], -1.75)
            }
            Primitive::LayerNorm => {
                need(1)?;
                self.layer_norm(inputs[0])
            }
        }
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if root.tape != self.id || root.index >= self.nodes.len() {
            return Err(invalid!("backward root was not recorded on this tape"));
        }
        let root_value = &self.nodes[root.index].value;
        if !root_value.is_scalar() {
            return Err(invalid!(
                "backward root must be a scalar, got shape {:?}",
                root_value.shape()
            ));
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.index + 1];
        grads[root.index] = Some(vec![1.0]);

        for idx in (0..=root.index).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
        }

        let leaves = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| {
                if !(n.requires_grad && matches!(n.op, Op::Leaf)) {
                    return None;
                }
                let data = grads
                    .get_mut(i)
                    .and_then(Option::take)
                    .unwrap_or_else(|| vec![0.0; n.value.numel()]);
                Some(Tensor::new(n.value.shape().to_vec(), data).expect("gradient shape"))
            })
            .collect();
        Ok(Gradients { tape: self.id, leaves })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, transpose_b } => {
                let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let (n, k) = (ta.shape()[0], ta.shape()[1]);
                let m = out.shape()[1];
                if self.nodes[*a].requires_grad {
                    let mut da = vec![0.0; n * k];
                    if *transpose_b {
                        // C = A Bᵀ, B is [m, k]: dA = dC B
                        matmul_nn(g, tb.data(), n, m, k, &mut da);
                    } else {
                        // B is [k, m]: dA = dC Bᵀ
                        matmul_nt(g, tb.data(), n, m, k, &mut da);
                    }
                    accumulate(grads, *a, &da);
                }
                if self.nodes[*b].requires_grad {
                    let mut db = vec![0.0; k * m];
                    if *transpose_b {
                        // dB = dCᵀ A, [m, k]
                        matmul_tn(g, ta.data(), n, m, k, &mut db);
                    } else {
                        // dB = Aᵀ dC, [k, m]
                        matmul_tn(ta.data(), g, n, k, m, &mut db);
                    }
                    accumulate(grads, *b, &db);
                }
            }
            Op::Transpose(a) => {
                let (c, r) = (out.shape()[0], out.shape()[1]);
                let mut da = vec![0.0; r * c];
                for i in 0..c {
                    for j in 0..r {
                        da[j * c + i] = g[i * r + j];
                    }
                }
                accumulate(grads, *a, &da);
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if self.nodes[*a].requires_grad {
                    accumulate(grads, *a, g);
                }
                if self.nodes[*b].requires_grad {
                    let cols = self.nodes[*b].value.numel();
                    let mut db = vec![0.0; cols];
                    for (i, &gi) in g.iter().enumerate() {
                        db[i % cols] += sign * gi;
                    }
                    accumulate(grads, *b, &db);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let cols = tb.numel();
                if self.nodes[*a].requires_grad {
                    let da: Vec<f64> = g.iter().enumerate().map(|(i, &gi)| gi * tb.data()[i % cols]).collect();
                    accumulate(grads, *a, &da);
                }
                if self.nodes[*b].requires_grad {
                    let mut db = vec![0.0; cols];
                    for (i, &gi) in g.iter().enumerate() {
                        db[i % cols] += gi * ta.data()[i];
                    }
                    accumulate(grads, *b, &db);
                }
            }
            Op::Concat(parts) => {
                let total = out.cols();
                let rows = out.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.nodes[p].value.cols();
                    if self.nodes[p].requires_grad {
                        let mut dp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            dp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        accumulate(grads, p, &dp);
                    }
                    offset += w;
                }
            }
            Op::Slice { input, start } => {
                let src = &self.nodes[*input].value;
                let (c, w) = (src.cols(), out.cols());
                let mut da = vec![0.0; src.numel()];
                for r in 0..src.rows() {
                    da[r * c + start..r * c + start + w].copy_from_slice(&g[r * w..(r + 1) * w]);
                }
                accumulate(grads, *input, &da);
            }
            Op::GatherRows { input, index } => {
                let src = &self.nodes[*input].value;
                let c = src.cols();
                let mut da = vec![0.0; src.numel()];
                for (k, &row) in index.iter().enumerate() {
                    for j in 0..c {
                        da[row * c + j] += g[k * c + j];
                    }
                }
                accumulate(grads, *input, &da);
            }
            Op::Reshape(a) => accumulate(grads, *a, g),
            Op::Softmax(a) => {
                let c = out.cols();
                let mut da = vec![0.0; out.numel()];
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let gr = &g[r * c..(r + 1) * c];
                    let dot: f64 = y.iter().zip(gr).map(|(yi, gi)| yi * gi).sum();
                    for j in 0..c {
                        da[r * c + j] = y[j] * (gr[j] - dot);
                    }
                }
                accumulate(grads, *a, &da);
            }
            Op::Sigmoid(a) => {
                let da: Vec<f64> = out.data().iter().zip(g).map(|(y, gi)| gi * y * (1.0 - y)).collect();
                accumulate(grads, *a, &da);
            }
            Op::Tanh(a) => {
                let da: Vec<f64> = out.data().iter().zip(g).map(|(y, gi)| gi * (1.0 - y * y)).collect();
                accumulate(grads, *a, &da);
            }
            Op::Relu(a) => {
                let x = &self.nodes[*a].value;
                let da: Vec<f64> = x
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(xi, gi)| if *xi > 0.0 { *gi } else { 0.0 })
                    .collect();
                accumulate(grads, *a, &da);
            }
            Op::Sin(a) => {
                let x = &self.nodes[*a].value;
                let da: Vec<f64> = x.data().iter().zip(g).map(|(xi, gi)| gi * xi.cos()).collect();
                accumulate(grads, *a, &da);
            }
            Op::Log(a) => {
                let x = &self.nodes[*a].value;
                let da: Vec<f64> = x
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(xi, gi)| if *xi > LOG_CLAMP { gi / xi } else { 0.0 })
                    .collect();
                accumulate(grads, *a, &da);
            }
            Op::Sum(a) => {
                let n = self.nodes[*a].value.numel();
                accumulate(grads, *a, &vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.nodes[*a].value.numel();
                accumulate(grads, *a, &vec![g[0] / n as f64; n]);
            }
            Op::Scale(a, factor) => {
                let da: Vec<f64> = g.iter().map(|gi| gi * factor).collect();
                accumulate(grads, *a, &da);
            }
            Op::LayerNorm { input, inv_std } => {
                let c = out.cols();
                let mut da = vec![0.0; out.numel()];
                for (r, s) in inv_std.iter().enumerate() {
                    let y = out.row(r);
                    let gr = &g[r * c..(r + 1) * c];
                    let mean_g = gr.iter().sum::<f64>() / c as f64;
                    let mean_gy = gr.iter().zip(y).map(|(gi, yi)| gi * yi).sum::<f64>() / c as f64;
                    for j in 0..c {
                        da[r * c + j] = s * (gr[j] - mean_g - y[j] * mean_gy);
                    }
                }
                accumulate(grads, *input, &da);
            }
        }
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    leaves: Vec<Option<Tensor>>,
}

impl Gradients {
    /// d(root)/d(leaf). `None` for constants and non-leaf nodes.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.leaves.get(v.index).and_then(Option::as_ref)
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], idx: usize, delta: &[f64]) {
    match &mut grads[idx] {
        Some(acc) => {
            for (a, d) in acc.iter_mut().zip(delta) {
                *a += d;
            }
        }
        slot @ None => *slot = Some(delta.to_vec()),
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax of one row with max subtraction.
pub fn softmax_row(row: &[f64]) -> impl Iterator<Item = f64> + '_ {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = row.iter().map(|x| (x - max).exp()).sum();
    row.iter().map(move |x| (x - max).exp() / denom)
}

/// `out[n, m] = a[n, k] · b[k, m]`
fn matmul_nn(a: &[f64], b: &[f64], n: usize, k: usize, m: usize, out: &mut [f64]) {
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[n, m] = a[n, k] · b[m, k]ᵀ`
fn matmul_nt(a: &[f64], b: &[f64], n: usize, k: usize, m: usize, out: &mut [f64]) {
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..m {
            let brow = &b[j * k..(j + 1) * k];
            out[i * m + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out[k, m] = a[n, k]ᵀ · b[n, m]`
fn matmul_tn(a: &[f64], b: &[f64], n: usize, k: usize, m: usize, out: &mut [f64]) {
    for i in 0..n {
        let brow = &b[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * m..(p + 1) * m];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn softmax_of_uniform_logits_is_uniform() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::vector(vec![0.0; 4]));
        let y = tape.softmax(z).unwrap();
        assert_eq!(tape.value(y).data(), &[0.25; 4]);
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::vector(vec![1000.0, 0.0, -1000.0]));
        let y = tape.softmax(z).unwrap();
        assert!(tape.value(y).is_finite());
        assert!((tape.value(y).data()[0] - 1.0).abs() < 1e-12);
        let l = tape.log(y).unwrap();
        assert!(tape.value(l).is_finite());
    }

    #[test]
    fn identity_matmul_is_noop() {
        let mut tape = Tape::new();
        let i3 = tape.constant(Tensor::identity(3));
        let a = tape.constant(t(&[3, 2], &[1.0, -2.0, 3.5, 0.0, 7.0, 1e-3]));
        let c = tape.matmul(i3, a).unwrap();
        assert_eq!(tape.value(c), tape.value(a));
    }

    #[test]
    fn sigmoid_matches_closed_form() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(0.5));
        let y = tape.sigmoid(x).unwrap();
        // 1 / (1 + e^-0.5), evaluated with mpmath at 30 digits
        assert!((tape.value(y).item() - 0.622_459_331_201_854_6).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_names_primitive_and_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul"), "{err}");
        assert!(err.contains("[2, 3]"), "{err}");
        let c = tape.constant(Tensor::zeros(&[4]));
        let err = tape.add(a, c).unwrap_err().to_string();
        assert!(err.contains("add") && err.contains("[4]"), "{err}");
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let sq = tape.mul(x, x).unwrap();
        let root = tape.sum(sq).unwrap();
        let g = tape.backward(root).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn grad_of_log_softmax_is_onehot_minus_softmax() {
        let z0 = vec![0.3, -1.2, 2.0, 0.7];
        let k = 2;
        let mut tape = Tape::new();
        let z = tape.param(Tensor::vector(z0.clone()));
        let p = tape.softmax(z).unwrap();
        let lp = tape.log(p).unwrap();
        let pick = tape.slice(lp, k, k + 1).unwrap();
        let root = tape.sum(pick).unwrap();
        let g = tape.backward(root).unwrap();
        let probs: Vec<f64> = softmax_row(&z0).collect();
        for (j, (gj, pj)) in g.wrt(z).unwrap().data().iter().zip(&probs).enumerate() {
            let expected = if j == k { 1.0 } else { 0.0 } - pj;
            assert!((gj - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn independent_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let y = tape.param(Tensor::vector(vec![3.0, 4.0]));
        let root = tape.sum(y).unwrap();
        let g = tape.backward(root).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_foreign_roots() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(tape.backward(x).is_err());
        let mut other = Tape::new();
        let y = other.param(Tensor::scalar(1.0));
        assert!(tape.backward(y).is_err());
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2, 5], &[1.0, 2.0, 3.0, 4.0, 10.0, -3.0, 0.5, 0.1, 8.0, 2.2]));
        let y = tape.layer_norm(x).unwrap();
        let v = tape.value(y);
        for r in 0..2 {
            let row = v.row(r);
            let mu = row.iter().sum::<f64>() / 5.0;
            let var = row.iter().map(|a| (a - mu) * (a - mu)).sum::<f64>() / 5.0;
            assert!(mu.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn broadcast_row_gradient_sums_over_rows() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::zeros(&[3, 2]));
        let b = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let c = tape.add(a, b).unwrap();
        let root = tape.sum(c).unwrap();
        let g = tape.backward(root).unwrap();
        assert_eq!(g.wrt(b).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn constants_are_not_tracked() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![1.0]));
        let b = tape.scale(a, 2.0).unwrap();
        assert!(!tape.requires_grad(b));
        let root = tape.sum(b).unwrap();
        let g = tape.backward(root).unwrap();
        assert!(g.wrt(a).is_none());
    }
}
