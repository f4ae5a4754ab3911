//! Tape-based reverse-mode differentiation.
//!
//! A [`Tape`] owns every value produced during one forward pass. Operations
//! whose inputs all have `requires_grad == false` are evaluated eagerly and
//! stored as constants; nothing is recorded for them, so frozen sub-graphs
//! cost no backward work and never receive gradients.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{compensated_sum, matmul_into, matmul_nt_into, matmul_tn_into, Scalar, Tensor};

/// Handle to a value on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Tanh(Var),
    Sigmoid(Var),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Slice {
        x: Var,
        row0: usize,
        col0: usize,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Sum(Var),
    MeanRows(Var),
    MaxRows {
        x: Var,
        argmax: Vec<usize>,
    },
    BceWithLogits {
        logit: Var,
        target: T,
        weight: T,
    },
}

struct Node<T> {
    value: Arc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn gelu_parts<T: Scalar>(x: T) -> (T, T) {
    // tanh approximation
    let k = T::of((2.0 / std::f64::consts::PI).sqrt());
    let a = T::of(0.044_715);
    let half = T::of(0.5);
    let one = T::one();
    let three = T::of(3.0);
    let inner = k * (x + a * x * x * x);
    let t = inner.tanh();
    let y = half * x * (one + t);
    let dy = half * (one + t) + half * x * (one - t * t) * k * (one + three * a * x * x);
    (y, dy)
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Scalar>(x: T) -> T {
    // log(1 + e^x) without overflow
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn require_2d(op: &'static str, t: &Tensor<impl Scalar>) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::shape(op, s, &[0, 0])),
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Shared leaf; the tensor is not copied.
    pub fn leaf(&mut self, value: Arc<Tensor<T>>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(Arc::new(value), false)
    }

    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.leaf(Arc::new(value), true)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = require_2d("matmul", ta)?;
        let (k2, n) = require_2d("matmul", tb)?;
        if k != k2 {
            return Err(Error::shape("matmul", ta.shape(), tb.shape()));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_into(ta.data(), tb.data(), &mut out, m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    /// `a * b^T` for `a: [m,k]`, `b: [n,k]`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = require_2d("matmul_t", ta)?;
        let (n, k2) = require_2d("matmul_t", tb)?;
        if k != k2 {
            return Err(Error::shape("matmul_t", ta.shape(), tb.shape()));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_nt_into(ta.data(), tb.data(), &mut out, m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMulT(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("add", ta.shape(), tb.shape()));
        }
        let mut value = ta.clone();
        value.add_assign(tb);
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    /// Adds a length-`n` bias to every row of `x: [m,n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let (_, n) = require_2d("add_bias", tx)?;
        if tb.len() != n || tb.dims2().0 != 1 {
            return Err(Error::shape("add_bias", tx.shape(), tb.shape()));
        }
        let mut value = tx.clone();
        for row in value.data_mut().chunks_mut(n) {
            for (o, &b) in row.iter_mut().zip(tb.data()) {
                *o = *o + b;
            }
        }
        Ok(self.push(value, Op::AddBias(x, bias), &[x, bias]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("mul", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let value = self.value(x).map(|v| v * s);
        self.push(value, Op::Scale(x, s), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.tanh());
        self.push(value, Op::Tanh(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        self.push(value, Op::Sigmoid(x), &[x])
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| gelu_parts(v).0);
        self.push(value, Op::Gelu(x), &[x])
    }

    /// Row-wise softmax. Columns where `key_mask` is false get probability
    /// zero, as if their logit were negative infinity.
    pub fn softmax_rows(&mut self, x: Var, key_mask: Option<&[bool]>) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = require_2d("softmax_rows", tx)?;
        if let Some(mask) = key_mask {
            if mask.len() != n {
                return Err(Error::shape("softmax_rows", tx.shape(), &[mask.len()]));
            }
        }
        let keep = |j: usize| key_mask.is_none_or(|mk| mk[j]);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &tx.data()[i * n..(i + 1) * n];
            let mut mx = T::neg_infinity();
            for (j, &v) in row.iter().enumerate() {
                if keep(j) && v > mx {
                    mx = v;
                }
            }
            if mx == T::neg_infinity() {
                continue;
            }
            let mut total = T::zero();
            let dst = &mut out[i * n..(i + 1) * n];
            for (j, &v) in row.iter().enumerate() {
                if keep(j) {
                    let e = (v - mx).exp();
                    dst[j] = e;
                    total = total + e;
                }
            }
            for d in dst.iter_mut() {
                *d = *d / total;
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::Softmax(x), &[x]))
    }

    /// Per-row normalisation to zero mean and unit variance, then `gain * xhat + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let (m, n) = require_2d("layer_norm", tx)?;
        if tg.len() != n || tb.len() != n {
            return Err(Error::shape("layer_norm", tx.shape(), tg.shape()));
        }
        let eps = T::of(eps);
        let nf = T::of(n as f64);
        let mut xhat = vec![T::zero(); m * n];
        let mut inv_std = vec![T::zero(); m];
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &tx.data()[i * n..(i + 1) * n];
            let mean = row.iter().fold(T::zero(), |a, &b| a + b) / nf;
            let var = row.iter().fold(T::zero(), |a, &b| a + (b - mean) * (b - mean)) / nf;
            let is = T::one() / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[i * n + j] = h;
                out[i * n + j] = h * tg.data()[j] + tb.data()[j];
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::Empty("concat_cols"))?;
        let (m, _) = require_2d("concat_cols", self.value(*first))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = require_2d("concat_cols", self.value(p))?;
            if r != m {
                return Err(Error::shape(
                    "concat_cols",
                    self.value(*first).shape(),
                    self.value(p).shape(),
                ));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let value = Tensor::new(vec![m, total], out)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::Empty("concat_rows"))?;
        let (_, n) = require_2d("concat_rows", self.value(*first))?;
        let mut rows = 0;
        for &p in parts {
            let (r, c) = require_2d("concat_rows", self.value(p))?;
            if c != n {
                return Err(Error::shape(
                    "concat_rows",
                    self.value(*first).shape(),
                    self.value(p).shape(),
                ));
            }
            rows += r;
        }
        let mut out = Vec::with_capacity(rows * n);
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::new(vec![rows, n], out)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Rectangular block `[row0..row0+rows, col0..col0+cols]` of a matrix.
    pub fn slice(&mut self, x: Var, row0: usize, rows: usize, col0: usize, cols: usize) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = require_2d("slice", tx)?;
        if rows == 0 || cols == 0 || row0 + rows > m || col0 + cols > n {
            return Err(Error::shape("slice", tx.shape(), &[row0, rows, col0, cols]));
        }
        let mut out = Vec::with_capacity(rows * cols);
        for i in row0..row0 + rows {
            out.extend_from_slice(&tx.data()[i * n + col0..i * n + col0 + cols]);
        }
        let value = Tensor::new(vec![rows, cols], out)?;
        Ok(self.push(value, Op::Slice { x, row0, col0 }, &[x]))
    }

    pub fn slice_rows(&mut self, x: Var, row0: usize, rows: usize) -> Result<Var> {
        let (_, n) = require_2d("slice_rows", self.value(x))?;
        self.slice(x, row0, rows, 0, n)
    }

    pub fn slice_cols(&mut self, x: Var, col0: usize, cols: usize) -> Result<Var> {
        let (m, _) = require_2d("slice_cols", self.value(x))?;
        self.slice(x, 0, m, col0, cols)
    }

    /// Gathers rows of `table: [V,d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        let (v, d) = require_2d("embedding", tt)?;
        if ids.is_empty() {
            return Err(Error::Empty("embedding ids"));
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::shape("embedding", tt.shape(), &[id]));
            }
            out.extend_from_slice(tt.row(id));
        }
        let value = Tensor::new(vec![ids.len(), d], out)?;
        Ok(self.push(
            value,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = compensated_sum(self.value(x).data());
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = require_2d("mean_rows", tx)?;
        let mut out = vec![T::zero(); n];
        for row in tx.data().chunks(n) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o = *o + v;
            }
        }
        let mf = T::of(m as f64);
        for o in &mut out {
            *o = *o / mf;
        }
        let value = Tensor::new(vec![1, n], out)?;
        Ok(self.push(value, Op::MeanRows(x), &[x]))
    }

    pub fn max_rows(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = require_2d("max_rows", tx)?;
        let mut out = tx.data()[..n].to_vec();
        let mut argmax = vec![0usize; n];
        for i in 1..m {
            for j in 0..n {
                let v = tx.data()[i * n + j];
                if v > out[j] {
                    out[j] = v;
                    argmax[j] = i;
                }
            }
        }
        let value = Tensor::new(vec![1, n], out)?;
        Ok(self.push(value, Op::MaxRows { x, argmax }, &[x]))
    }

    /// `weight * (softplus(z) - target * z)` for a scalar logit `z`.
    pub fn bce_with_logits(&mut self, logit: Var, target: T, weight: T) -> Result<Var> {
        let tl = self.value(logit);
        if !tl.is_scalar() {
            return Err(Error::shape("bce_with_logits", tl.shape(), &[1]));
        }
        let z = tl.data()[0];
        let loss = weight * (softplus(z) - target * z);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits { logit, target, weight },
            &[logit],
        ))
    }

    /// Reverse pass from a scalar `loss`. Only nodes that require gradients
    /// appear in the result.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        for (idx, g) in grads.iter_mut().enumerate() {
            let n = &self.nodes[idx];
            if !n.requires_grad || !matches!(n.op, Op::Leaf) {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, delta: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = ta.dims2();
                let (_, n) = tb.dims2();
                if self.requires_grad(*a) {
                    let mut da = vec![T::zero(); m * k];
                    matmul_nt_into(g.data(), tb.data(), &mut da, m, n, k);
                    self.accumulate(grads, *a, Tensor::new(ta.shape().to_vec(), da)?);
                }
                if self.requires_grad(*b) {
                    let mut db = vec![T::zero(); k * n];
                    matmul_tn_into(ta.data(), g.data(), &mut db, m, k, n);
                    self.accumulate(grads, *b, Tensor::new(tb.shape().to_vec(), db)?);
                }
            }
            Op::MatMulT(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = ta.dims2();
                let (n, _) = tb.dims2();
                if self.requires_grad(*a) {
                    let mut da = vec![T::zero(); m * k];
                    matmul_into(g.data(), tb.data(), &mut da, m, n, k);
                    self.accumulate(grads, *a, Tensor::new(ta.shape().to_vec(), da)?);
                }
                if self.requires_grad(*b) {
                    let mut db = vec![T::zero(); n * k];
                    matmul_tn_into(g.data(), ta.data(), &mut db, m, n, k);
                    self.accumulate(grads, *b, Tensor::new(tb.shape().to_vec(), db)?);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddBias(x, bias) => {
                self.accumulate(grads, *x, g.clone());
                if self.requires_grad(*bias) {
                    let tb = self.value(*bias);
                    let n = tb.len();
                    let mut db = vec![T::zero(); n];
                    for row in g.data().chunks(n) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d = *d + v;
                        }
                    }
                    self.accumulate(grads, *bias, Tensor::new(tb.shape().to_vec(), db)?);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    let d = g.data().iter().zip(tb.data()).map(|(&gv, &y)| gv * y).collect();
                    self.accumulate(grads, *a, Tensor::new(ta.shape().to_vec(), d)?);
                }
                if self.requires_grad(*b) {
                    let d = g.data().iter().zip(ta.data()).map(|(&gv, &x)| gv * x).collect();
                    self.accumulate(grads, *b, Tensor::new(tb.shape().to_vec(), d)?);
                }
            }
            Op::Scale(x, s) => {
                let s = *s;
                self.accumulate(grads, *x, g.map(|v| v * s));
            }
            Op::Tanh(x) => {
                let d = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(&gv, &y)| gv * (T::one() - y * y))
                    .collect();
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), d)?);
            }
            Op::Sigmoid(x) => {
                let d = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(&gv, &y)| gv * y * (T::one() - y))
                    .collect();
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), d)?);
            }
            Op::Gelu(x) => {
                let d = g
                    .data()
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(&gv, &xv)| gv * gelu_parts(xv).1)
                    .collect();
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), d)?);
            }
            Op::Softmax(x) => {
                let (m, n) = out.dims2();
                let mut d = vec![T::zero(); m * n];
                for i in 0..m {
                    let y = &out.data()[i * n..(i + 1) * n];
                    let gy = &g.data()[i * n..(i + 1) * n];
                    let dot = y.iter().zip(gy).fold(T::zero(), |a, (&p, &q)| a + p * q);
                    for j in 0..n {
                        d[i * n + j] = y[j] * (gy[j] - dot);
                    }
                }
                self.accumulate(grads, *x, Tensor::new(vec![m, n], d)?);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (m, n) = out.dims2();
                let tg = self.value(*gain);
                if self.requires_grad(*gain) || self.requires_grad(*bias) {
                    let mut dg = vec![T::zero(); n];
                    let mut db = vec![T::zero(); n];
                    for i in 0..m {
                        for j in 0..n {
                            let gv = g.data()[i * n + j];
                            dg[j] = dg[j] + gv * xhat[i * n + j];
                            db[j] = db[j] + gv;
                        }
                    }
                    self.accumulate(grads, *gain, Tensor::new(tg.shape().to_vec(), dg)?);
                    let bshape = self.value(*bias).shape().to_vec();
                    self.accumulate(grads, *bias, Tensor::new(bshape, db)?);
                }
                if self.requires_grad(*x) {
                    let nf = T::of(n as f64);
                    let mut dx = vec![T::zero(); m * n];
                    for i in 0..m {
                        let mut sum_dh = T::zero();
                        let mut sum_dh_h = T::zero();
                        for j in 0..n {
                            let dh = g.data()[i * n + j] * tg.data()[j];
                            sum_dh = sum_dh + dh;
                            sum_dh_h = sum_dh_h + dh * xhat[i * n + j];
                        }
                        for j in 0..n {
                            let dh = g.data()[i * n + j] * tg.data()[j];
                            let h = xhat[i * n + j];
                            dx[i * n + j] = inv_std[i] / nf * (nf * dh - sum_dh - h * sum_dh_h);
                        }
                    }
                    self.accumulate(grads, *x, Tensor::new(vec![m, n], dx)?);
                }
            }
            Op::ConcatCols(parts) => {
                let (m, total) = out.dims2();
                let mut col0 = 0;
                for &p in parts {
                    let (_, w) = self.value(p).dims2();
                    if self.requires_grad(p) {
                        let mut d = Vec::with_capacity(m * w);
                        for i in 0..m {
                            d.extend_from_slice(&g.data()[i * total + col0..i * total + col0 + w]);
                        }
                        self.accumulate(grads, p, Tensor::new(vec![m, w], d)?);
                    }
                    col0 += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if self.requires_grad(p) {
                        let d = g.data()[offset..offset + len].to_vec();
                        self.accumulate(grads, p, Tensor::new(self.value(p).shape().to_vec(), d)?);
                    }
                    offset += len;
                }
            }
            Op::Slice { x, row0, col0 } => {
                let tx = self.value(*x);
                let (_, n) = tx.dims2();
                let (rows, cols) = g.dims2();
                let mut d = Tensor::zeros(tx.shape());
                let dd = d.data_mut();
                for i in 0..rows {
                    let src = &g.data()[i * cols..(i + 1) * cols];
                    let dst = &mut dd[(row0 + i) * n + col0..(row0 + i) * n + col0 + cols];
                    dst.copy_from_slice(src);
                }
                self.accumulate(grads, *x, d);
            }
            Op::Embedding { table, ids } => {
                let tt = self.value(*table);
                let (_, d) = tt.dims2();
                let mut dt = Tensor::zeros(tt.shape());
                let data = dt.data_mut();
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        data[id * d + j] = data[id * d + j] + g.data()[r * d + j];
                    }
                }
                self.accumulate(grads, *table, dt);
            }
            Op::Sum(x) => {
                let gv = g.data()[0];
                self.accumulate(grads, *x, Tensor::full(self.value(*x).shape(), gv));
            }
            Op::MeanRows(x) => {
                let tx = self.value(*x);
                let (m, n) = tx.dims2();
                let mf = T::of(m as f64);
                let mut d = Vec::with_capacity(m * n);
                for _ in 0..m {
                    d.extend(g.data().iter().map(|&v| v / mf));
                }
                self.accumulate(grads, *x, Tensor::new(tx.shape().to_vec(), d)?);
            }
            Op::MaxRows { x, argmax } => {
                let tx = self.value(*x);
                let (_, n) = tx.dims2();
                let mut d = Tensor::zeros(tx.shape());
                for (j, &i) in argmax.iter().enumerate() {
                    d.data_mut()[i * n + j] = g.data()[j];
                }
                self.accumulate(grads, *x, d);
            }
            Op::BceWithLogits { logit, target, weight } => {
                let z = self.value(*logit).data()[0];
                let d = g.data()[0] * *weight * (sigmoid(z) - *target);
                let shape = self.value(*logit).shape().to_vec();
                self.accumulate(grads, *logit, Tensor::new(shape, vec![d])?);
            }
        }
        Ok(())
    }
}

/// Gradients of the leaves that required them.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

pub(crate) fn logistic<T: Scalar>(x: T) -> T {
    sigmoid(x)
}
