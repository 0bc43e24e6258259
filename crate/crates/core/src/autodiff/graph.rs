//! Define-by-run tape.
//!
//! Every op appends a node whose inputs were recorded earlier, so construction
//! order is a topological order and backward is a single reverse sweep.

use super::tensor::{gemm_a_bt_acc, gemm_acc, gemm_at_b_acc, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    Abs(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Transpose(Var),
    Reshape(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows {
        x: Var,
        rows: Vec<usize>,
    },
    MeanRows(Var),
    Sum(Var),
    Pick {
        x: Var,
        index: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Recorded computation plus accumulated leaf gradients.
pub struct Graph {
    nodes: Vec<Node>,
    validate: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

enum Broadcast {
    Same,
    LhsScalar,
    RhsScalar,
}

impl Graph {
    /// Tape with non-finite checking on every op.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            validate: true,
        }
    }

    pub fn set_validation(&mut self, on: bool) {
        self.validate = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if self.validate && !value.all_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<Broadcast> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            Ok(Broadcast::Same)
        } else if ta.is_scalar() {
            Ok(Broadcast::LhsScalar)
        } else if tb.is_scalar() {
            Ok(Broadcast::RhsScalar)
        } else {
            Err(Error::Dimension {
                op,
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            })
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let mode = self.broadcast(name, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let (shape, data): (Vec<usize>, Vec<f64>) = match mode {
            Broadcast::Same => (
                ta.shape().to_vec(),
                ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect(),
            ),
            Broadcast::LhsScalar => {
                let x = ta.item();
                (tb.shape().to_vec(), tb.data().iter().map(|&y| f(x, y)).collect())
            }
            Broadcast::RhsScalar => {
                let y = tb.item();
                (ta.shape().to_vec(), ta.data().iter().map(|&x| f(x, y)).collect())
            }
        };
        let out = Tensor::new(shape, data)?;
        self.push(name, out, op, &[a, b])
    }

    fn unary(&mut self, name: &'static str, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let t = self.value(x);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())?;
        self.push(name, out, op, &[x])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm_acc(ta.data(), tb.data(), &mut out, m, k, n);
        let out = Tensor::new(vec![m, n], out)?;
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Multiply by a constant.
    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary("scale", x, |v| v * c, Op::Scale(x, c))
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary("gelu", x, gelu, Op::Gelu(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary("exp", x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.value(x).data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("argument {bad} is not positive"),
            });
        }
        self.unary("log", x, f64::ln, Op::Log(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, sigmoid, Op::Sigmoid(x))
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary("abs", x, f64::abs, Op::Abs(x))
    }

    fn last_dim(&self, x: Var, op: &'static str) -> Result<(usize, usize)> {
        let t = self.value(x);
        let c = *t.shape().last().ok_or_else(|| Error::Shape(format!("{op} needs rank >= 1")))?;
        if c == 0 {
            return Err(Error::Shape(format!("{op} over an empty axis")));
        }
        Ok((t.numel() / c, c))
    }

    /// Softmax over the last axis, max-subtracted.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (rows, c) = self.last_dim(x, "softmax")?;
        let t = self.value(x);
        let mut out = t.data().to_vec();
        for r in 0..rows {
            let row = &mut out[r * c..(r + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let out = Tensor::new(t.shape().to_vec(), out)?;
        self.push("softmax", out, Op::Softmax(x), &[x])
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let (rows, c) = self.last_dim(x, "log_softmax")?;
        let t = self.value(x);
        let mut out = t.data().to_vec();
        for r in 0..rows {
            let row = &mut out[r * c..(r + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let out = Tensor::new(t.shape().to_vec(), out)?;
        self.push("log_softmax", out, Op::LogSoftmax(x), &[x])
    }

    /// Per-row normalisation over the last axis followed by `gain * xhat + bias`.
    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (rows, c) = self.last_dim(x, "layernorm")?;
        for p in [gain, bias] {
            if self.value(p).numel() != c {
                return Err(Error::Dimension {
                    op: "layernorm",
                    lhs: self.shape(x).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let t = self.value(x);
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut xhat = vec![0.0; t.numel()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; t.numel()];
        for r in 0..rows {
            let row = &t.data()[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[r * c + j] = h;
                out[r * c + j] = g[j] * h + b[j];
            }
        }
        let out = Tensor::new(t.shape().to_vec(), out)?;
        self.push(
            "layernorm",
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
        )
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = t.dims2()?;
        let src = t.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let out = Tensor::new(vec![c, r], out)?;
        self.push("transpose", out, Op::Transpose(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape.to_vec())?;
        self.push("reshape", out, Op::Reshape(x), &[x])
    }

    /// Columns `start..start+len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = t.dims2()?;
        if start + len > c {
            return Err(Error::Shape(format!(
                "column slice {start}..{} out of {c} columns",
                start + len
            )));
        }
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&t.data()[i * c + start..i * c + start + len]);
        }
        let out = Tensor::new(vec![r, len], out)?;
        self.push("slice_cols", out, Op::SliceCols { x, start }, &[x])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).dims2()?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != rows {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let out = Tensor::new(vec![rows, total], out)?;
        self.push("concat_cols", out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).dims2()?.1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if c != cols {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::new(vec![rows, cols], out)?;
        self.push("concat_rows", out, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Rows of `x` selected (with repetition allowed) by `rows`.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = t.dims2()?;
        let mut out = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            if i >= r {
                return Err(Error::Shape(format!("row index {i} out of {r} rows")));
            }
            out.extend_from_slice(&t.data()[i * c..(i + 1) * c]);
        }
        let out = Tensor::new(vec![rows.len(), c], out)?;
        self.push(
            "gather_rows",
            out,
            Op::GatherRows {
                x,
                rows: rows.to_vec(),
            },
            &[x],
        )
    }

    /// Mean over rows of a matrix, giving a rank-1 tensor.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = t.dims2()?;
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, v) in out.iter_mut().zip(&t.data()[i * c..(i + 1) * c]) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= r as f64;
        }
        let out = Tensor::new(vec![c], out)?;
        self.push("mean_rows", out, Op::MeanRows(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    /// Single element (flat index) as a scalar.
    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var> {
        let t = self.value(x);
        let v = *t.data().get(index).ok_or_else(|| {
            Error::Shape(format!("index {index} out of {} elements", t.numel()))
        })?;
        self.push("pick", Tensor::scalar(v), Op::Pick { x, index }, &[x])
    }

    /// Reverse sweep from a scalar loss. Leaf gradients accumulate across calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => node.grad = Some(g),
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn acc_buf<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn acc_broadcast(
        &self,
        grads: &mut [Option<Vec<f64>>],
        v: Var,
        contrib: impl Iterator<Item = f64>,
    ) {
        let scalar = self.nodes[v.0].value.is_scalar();
        if let Some(buf) = self.acc_buf(grads, v) {
            if scalar && buf.len() == 1 {
                buf[0] += contrib.sum::<f64>();
            } else {
                buf.iter_mut().zip(contrib).for_each(|(a, c)| *a += c);
            }
        }
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = self.nodes[i].value.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if let Some(buf) = self.acc_buf(grads, *a) {
                    gemm_a_bt_acc(g, tb.data(), buf, m, n, k);
                }
                if let Some(buf) = self.acc_buf(grads, *b) {
                    gemm_at_b_acc(ta.data(), g, buf, m, k, n);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                let op = self.nodes[i].op.clone();
                self.binary_backward(&op, *a, *b, g, grads);
            }
            Op::Scale(x, c) => {
                self.acc_broadcast(grads, *x, g.iter().map(|v| v * c));
            }
            Op::Gelu(x) => {
                let xs = self.value(*x).data();
                self.acc_broadcast(grads, *x, g.iter().zip(xs).map(|(g, &x)| g * gelu_grad(x)));
            }
            Op::Relu(x) => {
                let xs = self.value(*x).data();
                self.acc_broadcast(
                    grads,
                    *x,
                    g.iter().zip(xs).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }),
                );
            }
            Op::Exp(x) => {
                self.acc_broadcast(grads, *x, g.iter().zip(out).map(|(g, y)| g * y));
            }
            Op::Log(x) => {
                let xs = self.value(*x).data();
                self.acc_broadcast(grads, *x, g.iter().zip(xs).map(|(g, x)| g / x));
            }
            Op::Sigmoid(x) => {
                self.acc_broadcast(grads, *x, g.iter().zip(out).map(|(g, y)| g * y * (1.0 - y)));
            }
            Op::Abs(x) => {
                let xs = self.value(*x).data();
                self.acc_broadcast(
                    grads,
                    *x,
                    g.iter().zip(xs).map(|(g, &x)| {
                        if x > 0.0 {
                            *g
                        } else if x < 0.0 {
                            -g
                        } else {
                            0.0
                        }
                    }),
                );
            }
            Op::Softmax(x) => {
                let c = *self.nodes[i].value.shape().last().unwrap_or(&1);
                let mut dx = vec![0.0; out.len()];
                for (r, (yrow, grow)) in out.chunks(c).zip(g.chunks(c)).enumerate() {
                    let dot: f64 = yrow.iter().zip(grow).map(|(y, g)| y * g).sum();
                    for j in 0..c {
                        dx[r * c + j] = yrow[j] * (grow[j] - dot);
                    }
                }
                self.acc_broadcast(grads, *x, dx.into_iter());
            }
            Op::LogSoftmax(x) => {
                let c = *self.nodes[i].value.shape().last().unwrap_or(&1);
                let mut dx = vec![0.0; out.len()];
                for (r, (yrow, grow)) in out.chunks(c).zip(g.chunks(c)).enumerate() {
                    let gsum: f64 = grow.iter().sum();
                    for j in 0..c {
                        dx[r * c + j] = grow[j] - yrow[j].exp() * gsum;
                    }
                }
                self.acc_broadcast(grads, *x, dx.into_iter());
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let c = self.value(*gain).numel();
                let gv = self.value(*gain).data();
                if let Some(buf) = self.acc_buf(grads, *gain) {
                    for (grow, hrow) in g.chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            buf[j] += grow[j] * hrow[j];
                        }
                    }
                }
                if let Some(buf) = self.acc_buf(grads, *bias) {
                    for grow in g.chunks(c) {
                        for j in 0..c {
                            buf[j] += grow[j];
                        }
                    }
                }
                if let Some(buf) = self.acc_buf(grads, *x) {
                    let cf = c as f64;
                    for (r, (grow, hrow)) in g.chunks(c).zip(xhat.chunks(c)).enumerate() {
                        let mut sum_d = 0.0;
                        let mut sum_dh = 0.0;
                        for j in 0..c {
                            let d = grow[j] * gv[j];
                            sum_d += d;
                            sum_dh += d * hrow[j];
                        }
                        for j in 0..c {
                            let d = grow[j] * gv[j];
                            buf[r * c + j] += rstd[r] * (d - sum_d / cf - hrow[j] * sum_dh / cf);
                        }
                    }
                }
            }
            Op::Transpose(x) => {
                let (r, c) = self.value(*x).dims2().unwrap_or((0, 0));
                if let Some(buf) = self.acc_buf(grads, *x) {
                    // output is c x r
                    for i in 0..r {
                        for j in 0..c {
                            buf[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                self.acc_broadcast(grads, *x, g.iter().copied());
            }
            Op::SliceCols { x, start } => {
                let (r, c) = self.value(*x).dims2().unwrap_or((0, 0));
                let len = g.len() / r.max(1);
                if let Some(buf) = self.acc_buf(grads, *x) {
                    for i in 0..r {
                        for j in 0..len {
                            buf[i * c + start + j] += g[i * len + j];
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = self.nodes[i].value.dims2().unwrap_or((0, 0));
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).dims2().map(|d| d.1).unwrap_or(0);
                    if let Some(buf) = self.acc_buf(grads, *p) {
                        for r in 0..rows {
                            for j in 0..w {
                                buf[r * w + j] += g[r * total + offset + j];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).numel();
                    if let Some(buf) = self.acc_buf(grads, *p) {
                        buf.iter_mut().zip(&g[offset..offset + n]).for_each(|(a, b)| *a += b);
                    }
                    offset += n;
                }
            }
            Op::GatherRows { x, rows } => {
                let c = self.value(*x).dims2().map(|d| d.1).unwrap_or(0);
                if let Some(buf) = self.acc_buf(grads, *x) {
                    for (k, &r) in rows.iter().enumerate() {
                        for j in 0..c {
                            buf[r * c + j] += g[k * c + j];
                        }
                    }
                }
            }
            Op::MeanRows(x) => {
                let (r, c) = self.value(*x).dims2().unwrap_or((0, 0));
                let inv = 1.0 / r as f64;
                if let Some(buf) = self.acc_buf(grads, *x) {
                    for i in 0..r {
                        for j in 0..c {
                            buf[i * c + j] += g[j] * inv;
                        }
                    }
                }
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                self.acc_broadcast(grads, *x, std::iter::repeat_n(g[0], n));
            }
            Op::Pick { x, index } => {
                if let Some(buf) = self.acc_buf(grads, *x) {
                    buf[*index] += g[0];
                }
            }
        }
    }

    fn binary_backward(&self, op: &Op, a: Var, b: Var, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let (ta, tb) = (self.value(a), self.value(b));
        let (a_scalar, b_scalar) = (
            ta.is_scalar() && ta.shape() != tb.shape(),
            tb.is_scalar() && ta.shape() != tb.shape(),
        );
        let at = |k: usize| if a_scalar { ta.data()[0] } else { ta.data()[k] };
        let bt = |k: usize| if b_scalar { tb.data()[0] } else { tb.data()[k] };
        let (da, db): (Vec<f64>, Vec<f64>) = match op {
            Op::Add(..) => (g.to_vec(), g.to_vec()),
            Op::Sub(..) => (g.to_vec(), g.iter().map(|v| -v).collect()),
            Op::Mul(..) => (
                g.iter().enumerate().map(|(k, g)| g * bt(k)).collect(),
                g.iter().enumerate().map(|(k, g)| g * at(k)).collect(),
            ),
            _ => unreachable!("binary_backward on non-binary op"),
        };
        self.acc_broadcast(grads, a, da.into_iter());
        self.acc_broadcast(grads, b, db.into_iter());
    }
}
