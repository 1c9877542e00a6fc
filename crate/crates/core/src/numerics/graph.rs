//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node to the [`Graph`]; [`Graph::backward`] walks
//! the tape in reverse and accumulates gradients for nodes that require them.
//! Nodes whose inputs are all constants are never differentiated.

use std::borrow::Cow;

use super::tensor::{gemm, gemm_nt, gemm_tn, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One packed sequence inside a row-stacked activation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: usize,
    /// `true` marks a real position, `false` a padded one.
    pub mask: Vec<bool>,
}

impl Segment {
    pub fn dense(start: usize, len: usize) -> Self {
        Segment {
            start,
            mask: vec![true; len],
        }
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }
}

/// User-defined differentiable operation.
pub trait CustomOp {
    fn name(&self) -> &str;
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor>;
    /// Gradient with respect to each input, in input order.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &[f64]) -> Vec<Vec<f64>>;
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Relu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        segments: Vec<Segment>,
        heads: usize,
        probs: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    SelectRows {
        x: Var,
        indices: Vec<usize>,
    },
    L2NormalizeRows {
        x: Var,
        norms: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    Diag(Var),
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp>,
    },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of `var`, or `None` when the loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

#[derive(Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A value that never receives gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.detached(), Op::Leaf, false)
    }

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.push(t.detached(), Op::Leaf, requires_grad)
    }

    /// Borrowed leaf; avoids copying large parameter tensors into the tape.
    pub fn leaf_ref(&mut self, t: &'a Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(t),
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn dims2(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a);
        let (k2, n) = self.dims2(b);
        if self.value(a).shape().len() != 2 || self.value(b).shape().len() != 2 || k != k2 {
            return Err(Error::shape("matmul", self.value(a).shape(), self.value(b).shape()));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), self.value(b).data(), &mut out, false);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a);
        let (n, k2) = self.dims2(b);
        if k != k2 {
            return Err(Error::shape("matmul_nt", self.value(a).shape(), self.value(b).shape()));
        }
        let mut out = vec![0.0; m * n];
        gemm_nt(m, k, n, self.value(a).data(), self.value(b).data(), &mut out, false);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMulNT(a, b), rg))
    }

    fn zip(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// Adds a length-`n` bias to every row of an `m×n` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let n = tx.cols();
        if tb.len() != n {
            return Err(Error::shape("add_bias", tx.shape(), tb.shape()));
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(&[x, bias]);
        Ok(self.push(t, Op::AddBias(x, bias), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let tx = self.value(x);
        let t = Tensor::new(tx.shape().to_vec(), tx.data().iter().map(|v| v * c).collect()).expect("shape preserved");
        let rg = self.rg(&[x]);
        self.push(t, Op::Scale(x, c), rg)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let t =
            Tensor::new(tx.shape().to_vec(), tx.data().iter().map(|&v| gelu(v)).collect()).expect("shape preserved");
        let rg = self.rg(&[x]);
        self.push(t, Op::Gelu(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let t =
            Tensor::new(tx.shape().to_vec(), tx.data().iter().map(|&v| v.max(0.0)).collect()).expect("shape preserved");
        let rg = self.rg(&[x]);
        self.push(t, Op::Relu(x), rg)
    }

    /// Per-row normalization to zero mean and unit (population) variance,
    /// followed by `gain ⊙ n + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let tx = self.value(x);
        let d = tx.cols();
        let (tg, tb) = (self.value(gain), self.value(bias));
        if tg.len() != d || tb.len() != d {
            return Err(Error::shape("layer_norm", tx.shape(), tg.shape()));
        }
        let rows = tx.rows();
        let mut normalized = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * d];
        for r in 0..rows {
            let row = tx.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..d {
                let n = (row[c] - mean) * is;
                normalized[r * d + c] = n;
                out[r * d + c] = n * tg.data()[c] + tb.data()[c];
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
            rg,
        ))
    }

    fn softmax_like(&self, x: Var, log: bool) -> Result<Tensor> {
        let tx = self.value(x);
        if !tx.all_finite() {
            return Err(Error::NonFinite(if log { "log_softmax_rows" } else { "softmax_rows" }));
        }
        let n = tx.cols();
        let mut out = tx.data().to_vec();
        for row in out.chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v -= max;
                sum += v.exp();
            }
            if log {
                let lse = sum.ln();
                row.iter_mut().for_each(|v| *v -= lse);
            } else {
                row.iter_mut().for_each(|v| *v = v.exp() / sum);
            }
        }
        Tensor::new(tx.shape().to_vec(), out)
    }

    /// Row-wise softmax with the row maximum subtracted first.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.softmax_like(x, false)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::SoftmaxRows(x), rg))
    }

    /// Row-wise log-softmax (stable log-sum-exp).
    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.softmax_like(x, true)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::LogSoftmaxRows(x), rg))
    }

    /// Scaled dot-product attention over packed sequences.
    ///
    /// `q`, `k`, `v` are `rows×d` matrices holding every segment stacked
    /// vertically; heads split the columns evenly. Keys at masked positions
    /// get a score of −∞. Rows outside every segment are zero in the output.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, segments: &[Segment], heads: usize) -> Result<Var> {
        let (rows, d) = self.dims2(q);
        for other in [k, v] {
            if self.value(other).shape() != self.value(q).shape() {
                return Err(Error::shape(
                    "attention",
                    self.value(q).shape(),
                    self.value(other).shape(),
                ));
            }
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "model width {d} not divisible by {heads} heads"
            )));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut out = vec![0.0; rows * d];
        let mut probs = Vec::new();
        for (si, seg) in segments.iter().enumerate() {
            let len = seg.len();
            if seg.start + len > rows {
                return Err(Error::shape("attention segment", &[seg.start, len], &[rows]));
            }
            if !seg.mask.iter().any(|&m| m) {
                return Err(Error::AllMasked(si));
            }
            for h in 0..heads {
                let off = h * dh;
                for i in 0..len {
                    let qi = &qd[(seg.start + i) * d + off..][..dh];
                    let base = probs.len();
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..len {
                        let s = if seg.mask[j] {
                            let kj = &kd[(seg.start + j) * d + off..][..dh];
                            qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale
                        } else {
                            f64::NEG_INFINITY
                        };
                        max = max.max(s);
                        probs.push(s);
                    }
                    let p = &mut probs[base..];
                    let mut sum = 0.0;
                    for s in p.iter_mut() {
                        *s = (*s - max).exp();
                        sum += *s;
                    }
                    p.iter_mut().for_each(|s| *s /= sum);
                    let orow = &mut out[(seg.start + i) * d + off..][..dh];
                    for (j, &pj) in p.iter().enumerate() {
                        if pj == 0.0 {
                            continue;
                        }
                        let vj = &vd[(seg.start + j) * d + off..][..dh];
                        for (o, vv) in orow.iter_mut().zip(vj) {
                            *o += pj * vv;
                        }
                    }
                }
            }
        }
        if !out.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("attention"));
        }
        let t = Tensor::matrix(rows, d, out)?;
        let rg = self.rg(&[q, k, v]);
        Ok(self.push(
            t,
            Op::Attention {
                q,
                k,
                v,
                segments: segments.to_vec(),
                heads,
                probs,
            },
            rg,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        if let Some(bad) = parts.iter().find(|p| self.value(**p).rows() != rows) {
            return Err(Error::shape(
                "concat_cols",
                self.value(parts[0]).shape(),
                self.value(*bad).shape(),
            ));
        }
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                out.extend_from_slice(self.value(*p).row(r));
            }
        }
        let t = Tensor::matrix(rows, total, out)?;
        let rg = self.rg(parts);
        Ok(self.push(t, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        if let Some(bad) = parts.iter().find(|p| self.value(**p).cols() != cols) {
            return Err(Error::shape(
                "concat_rows",
                self.value(parts[0]).shape(),
                self.value(*bad).shape(),
            ));
        }
        let mut out = Vec::new();
        for p in parts {
            out.extend_from_slice(self.value(*p).data());
        }
        let rows = out.len() / cols;
        let t = Tensor::matrix(rows, cols, out)?;
        let rg = self.rg(parts);
        Ok(self.push(t, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.dims2(x);
        if len == 0 || start + len > rows {
            return Err(Error::shape("slice_rows", &[start, len], &[rows]));
        }
        let data = self.value(x).data()[start * cols..(start + len) * cols].to_vec();
        let t = Tensor::matrix(len, cols, data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::SliceRows { x, start }, rg))
    }

    /// Gathers rows by index; repeated indices are allowed (embedding lookup).
    pub fn select_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let (rows, cols) = self.dims2(x);
        if indices.is_empty() {
            return Err(Error::shape("select_rows", &[0], &[rows]));
        }
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= rows {
                return Err(Error::shape("select_rows", &[i], &[rows]));
            }
            data.extend_from_slice(self.value(x).row(i));
        }
        let t = Tensor::matrix(indices.len(), cols, data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            t,
            Op::SelectRows {
                x,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let n = tx.cols();
        let mut norms = Vec::with_capacity(tx.rows());
        let mut out = tx.data().to_vec();
        for row in out.chunks_mut(n) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(Error::NonFinite("l2_normalize_rows"));
            }
            row.iter_mut().for_each(|v| *v /= norm);
            norms.push(norm);
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::L2NormalizeRows { x, norms }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Diagonal of a square matrix as a vector.
    pub fn diag(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims2(x);
        if r != c {
            return Err(Error::shape("diag", &[r], &[c]));
        }
        let data = (0..r).map(|i| self.value(x).get2(i, i)).collect();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::vector(data)?, Op::Diag(x), rg))
    }

    pub fn custom(&mut self, inputs: &[Var], op: Box<dyn CustomOp>) -> Result<Var> {
        let t = {
            let vals: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
            op.forward(&vals)?
        };
        let rg = self.rg(inputs);
        Ok(self.push(
            t,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            rg,
        ))
    }

    /// Reverse-mode accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[idx].take() else { continue };
            self.backward_node(idx, &gy, &mut grads);
            grads[idx] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, idx: usize, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        // Lazily allocates the gradient buffer of `v` and hands it to `f`.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims2(*a);
                let n = self.value(*b).cols();
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |g| gemm_nt(m, n, k, gy, bd, g, true));
                acc(*b, &mut |g| gemm_tn(k, m, n, ad, gy, g, true));
            }
            Op::MatMulNT(a, b) => {
                let (m, k) = self.dims2(*a);
                let n = self.value(*b).rows();
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |g| gemm(m, n, k, gy, bd, g, true));
                acc(*b, &mut |g| gemm_tn(n, m, k, gy, ad, g, true));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |g| add_into(g, gy));
                acc(*b, &mut |g| add_into(g, gy));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |g| add_into(g, gy));
                acc(*b, &mut |g| g.iter_mut().zip(gy).for_each(|(g, d)| *g -= d));
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += gy[i] * bd[i];
                    }
                });
                acc(*b, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += gy[i] * ad[i];
                    }
                });
            }
            Op::AddBias(x, b) => {
                acc(*x, &mut |g| add_into(g, gy));
                acc(*b, &mut |g| {
                    let n = g.len();
                    for row in gy.chunks(n) {
                        add_into(g, row);
                    }
                });
            }
            Op::Scale(x, c) => acc(*x, &mut |g| g.iter_mut().zip(gy).for_each(|(g, d)| *g += c * d)),
            Op::Gelu(x) => {
                let xd = self.value(*x).data();
                acc(*x, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += gy[i] * gelu_grad(xd[i]);
                    }
                });
            }
            Op::Relu(x) => {
                let xd = self.value(*x).data();
                acc(*x, &mut |g| {
                    for i in 0..g.len() {
                        if xd[i] > 0.0 {
                            g[i] += gy[i];
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let d = self.value(*x).cols();
                let gd = self.value(*gain).data();
                acc(*x, &mut |g| {
                    let mut dn = vec![0.0; d];
                    for (r, is) in inv_std.iter().enumerate() {
                        let gyr = &gy[r * d..(r + 1) * d];
                        let nr = &normalized[r * d..(r + 1) * d];
                        for c in 0..d {
                            dn[c] = gyr[c] * gd[c];
                        }
                        let mean_dn = dn.iter().sum::<f64>() / d as f64;
                        let mean_dnn = dn.iter().zip(nr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        let gr = &mut g[r * d..(r + 1) * d];
                        for c in 0..d {
                            gr[c] += is * (dn[c] - mean_dn - nr[c] * mean_dnn);
                        }
                    }
                });
                acc(*gain, &mut |g| {
                    for (gyr, nr) in gy.chunks(d).zip(normalized.chunks(d)) {
                        for c in 0..d {
                            g[c] += gyr[c] * nr[c];
                        }
                    }
                });
                acc(*bias, &mut |g| {
                    for gyr in gy.chunks(d) {
                        add_into(g, gyr);
                    }
                });
            }
            Op::SoftmaxRows(x) => {
                let n = y.cols();
                acc(*x, &mut |g| {
                    for ((gr, yr), gyr) in g.chunks_mut(n).zip(y.data().chunks(n)).zip(gy.chunks(n)) {
                        let dot: f64 = yr.iter().zip(gyr).map(|(a, b)| a * b).sum();
                        for c in 0..n {
                            gr[c] += yr[c] * (gyr[c] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmaxRows(x) => {
                let n = y.cols();
                acc(*x, &mut |g| {
                    for ((gr, yr), gyr) in g.chunks_mut(n).zip(y.data().chunks(n)).zip(gy.chunks(n)) {
                        let total: f64 = gyr.iter().sum();
                        for c in 0..n {
                            gr[c] += gyr[c] - yr[c].exp() * total;
                        }
                    }
                });
            }
            Op::Attention {
                q,
                k,
                v,
                segments,
                heads,
                probs,
            } => {
                let d = self.value(*q).cols();
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let (qd, kd, vd) = (self.value(*q).data(), self.value(*k).data(), self.value(*v).data());
                let rows = self.value(*q).rows();
                let mut gq = vec![0.0; rows * d];
                let mut gk = vec![0.0; rows * d];
                let mut gv = vec![0.0; rows * d];
                let mut pos = 0;
                for seg in segments {
                    let len = seg.len();
                    let mut ds = vec![0.0; len];
                    for h in 0..*heads {
                        let off = h * dh;
                        for i in 0..len {
                            let p = &probs[pos..pos + len];
                            pos += len;
                            let ri = (seg.start + i) * d + off;
                            let go = &gy[ri..ri + dh];
                            // dP_ij = dO_i · V_j ; dV_j += P_ij dO_i
                            for j in 0..len {
                                if p[j] == 0.0 {
                                    ds[j] = 0.0;
                                    continue;
                                }
                                let rj = (seg.start + j) * d + off;
                                let vj = &vd[rj..rj + dh];
                                ds[j] = go.iter().zip(vj).map(|(a, b)| a * b).sum();
                                let gvj = &mut gv[rj..rj + dh];
                                for c in 0..dh {
                                    gvj[c] += p[j] * go[c];
                                }
                            }
                            let dot: f64 = p.iter().zip(&ds).map(|(a, b)| a * b).sum();
                            for j in 0..len {
                                if p[j] == 0.0 {
                                    continue;
                                }
                                let dsj = p[j] * (ds[j] - dot) * scale;
                                let rj = (seg.start + j) * d + off;
                                for c in 0..dh {
                                    gq[ri + c] += dsj * kd[rj + c];
                                    gk[rj + c] += dsj * qd[ri + c];
                                }
                            }
                        }
                    }
                }
                acc(*q, &mut |g| add_into(g, &gq));
                acc(*k, &mut |g| add_into(g, &gk));
                acc(*v, &mut |g| add_into(g, &gv));
            }
            Op::ConcatCols(parts) => {
                let total = y.cols();
                let mut off = 0;
                for p in parts {
                    let c = self.value(*p).cols();
                    acc(*p, &mut |g| {
                        for (gr, gyr) in g.chunks_mut(c).zip(gy.chunks(total)) {
                            add_into(gr, &gyr[off..off + c]);
                        }
                    });
                    off += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    acc(*p, &mut |g| add_into(g, &gy[off..off + n]));
                    off += n;
                }
            }
            Op::SliceRows { x, start } => {
                let c = y.cols();
                acc(*x, &mut |g| add_into(&mut g[start * c..start * c + gy.len()], gy));
            }
            Op::SelectRows { x, indices } => {
                let c = y.cols();
                acc(*x, &mut |g| {
                    for (r, &i) in indices.iter().enumerate() {
                        add_into(&mut g[i * c..(i + 1) * c], &gy[r * c..(r + 1) * c]);
                    }
                });
            }
            Op::L2NormalizeRows { x, norms } => {
                let n = y.cols();
                acc(*x, &mut |g| {
                    for (r, norm) in norms.iter().enumerate() {
                        let yr = y.row(r);
                        let gyr = &gy[r * n..(r + 1) * n];
                        let dot: f64 = yr.iter().zip(gyr).map(|(a, b)| a * b).sum();
                        for c in 0..n {
                            g[r * n + c] += (gyr[c] - yr[c] * dot) / norm;
                        }
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |g| g.iter_mut().for_each(|v| *v += gy[0])),
            Op::Mean(x) => acc(*x, &mut |g| {
                let s = gy[0] / g.len() as f64;
                g.iter_mut().for_each(|v| *v += s)
            }),
            Op::Diag(x) => {
                let n = gy.len();
                acc(*x, &mut |g| {
                    for i in 0..n {
                        g[i * n + i] += gy[i];
                    }
                });
            }
            Op::Custom { inputs, op } => {
                let vals: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                let gin = op.backward(&vals, y, gy);
                for (v, gi) in inputs.iter().zip(gin) {
                    acc(*v, &mut |g| add_into(g, &gi));
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
