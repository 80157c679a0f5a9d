//! Recorded reverse-mode differentiation over 2-D tensors.
//!
//! A [`Tape`] records every operation of a forward pass. Parameters enter
//! through [`Tape::bind`], which borrows a [`ParamSet`] for the lifetime of
//! the tape; [`Tape::backward`] then walks the record in reverse and returns
//! gradients that can be pulled out per bound set.

use std::borrow::Cow;
use std::sync::atomic::{AtomicU32, Ordering};

use super::params::{ParamId, ParamSet};
use super::tensor::{axpy, dot, linear_grad_input, linear_grad_weight, Tensor};
use crate::error::NnError;

static NEXT_ID: AtomicU32 = AtomicU32::new(1);

fn fresh_id() -> u32 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Handle to a value recorded on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u32,
    idx: u32,
}

impl Var {
    fn index(self) -> usize {
        self.idx as usize
    }
}

/// Parameters of one [`ParamSet`] as recorded on a tape.
#[derive(Debug, Clone)]
pub struct Bound {
    id: u32,
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

enum Op {
    Const,
    Param { bind: u32, index: usize },
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    OneMinus(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Elu(Var),
    Abs(Var),
    ConcatCols(Vec<Var>),
    SliceCols { a: Var, start: usize },
    ConcatRows(Vec<Var>),
    SliceRows { a: Var, start: usize },
    Reshape(Var),
    Gather { a: Var, idx: Vec<usize> },
    RowVecMat { q: Var, w: Var },
    RowDot(Var, Var),
    RowSqErr { pred: Var, target: Vec<f32> },
    WeightedSum { a: Var, weights: Vec<f32>, denom: f64 },
    SoftmaxXent { logits: Var, labels: Vec<usize>, probs: Vec<f32> },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Elementwise nonlinearities available to networks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Elu,
    Abs,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, v: f32) -> f32 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
            Activation::Elu => {
                if v > 0.0 {
                    v
                } else {
                    v.exp_m1()
                }
            }
            Activation::Abs => v.abs(),
            Activation::Sigmoid => sigmoid(v),
        }
    }
}

#[inline]
pub(crate) fn sigmoid(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Elementwise activation on a plain tensor.
pub fn activation(kind: Activation, x: &Tensor) -> Tensor {
    x.map(|v| kind.apply(v))
}

pub struct Tape<'a> {
    id: u32,
    nodes: Vec<Node<'a>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { id: fresh_id(), nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var { tape: self.id, idx: (self.nodes.len() - 1) as u32 }
    }

    fn node(&self, v: Var) -> &Node<'a> {
        assert_eq!(v.tape, self.id, "variable belongs to a different tape");
        &self.nodes[v.index()]
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.node(v).needs_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).value
    }

    /// A scalar's value with its final reduction (and any scalar `add`,
    /// `sub` or `scale` on top) redone in f64, so the last rounding to f32
    /// does not hide small changes.
    pub fn scalar_f64(&self, v: Var) -> f64 {
        match &self.node(v).op {
            Op::WeightedSum { a, weights, denom } => {
                let s: f64 = self.value(*a).data().iter().zip(weights).map(|(&x, &w)| x as f64 * w as f64).sum();
                s / denom
            }
            Op::Scale(a, k) if self.value(*a).len() == 1 => self.scalar_f64(*a) * *k as f64,
            Op::Add(a, b) if self.value(*a).len() == 1 && self.value(*b).len() == 1 => {
                self.scalar_f64(*a) + self.scalar_f64(*b)
            }
            Op::Sub(a, b) if self.value(*a).len() == 1 && self.value(*b).len() == 1 => {
                self.scalar_f64(*a) - self.scalar_f64(*b)
            }
            _ => self.value(v).item() as f64,
        }
    }

    /// Records every tensor of `set` as a differentiable leaf.
    pub fn bind(&mut self, set: &'a ParamSet) -> Bound {
        let bind = fresh_id();
        let vars = set
            .tensors()
            .iter()
            .enumerate()
            .map(|(index, t)| self.push(Cow::Borrowed(t), Op::Param { bind, index }, true))
            .collect();
        Bound { id: bind, vars }
    }

    /// Records a tensor that never receives gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Const, false)
    }

    pub fn constant_ref(&mut self, t: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(t), Op::Const, false)
    }

    /// Copies the value of `v` into a new constant (stop-gradient).
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    /// `y = x . W^T + b`, `W` shaped `[out x in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NnError> {
        let y = {
            let bias = b.map(|b| self.value(b));
            super::tensor::linear(self.value(x), self.value(w), bias)?
        };
        let mut parents = vec![x, w];
        parents.extend(b);
        let ng = self.needs(&parents);
        Ok(self.push(Cow::Owned(y), Op::Linear { x, w, b }, ng))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f32, f32) -> f32) -> Result<Tensor, NnError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows() != tb.rows() || ta.cols() != tb.cols() {
            return Err(NnError::dim(name, format!("{:?}", ta.shape()), format!("{:?}", tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let t = self.binary(a, b, "add", |x, y| x + y)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(Cow::Owned(t), Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let t = self.binary(a, b, "sub", |x, y| x - y)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(Cow::Owned(t), Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let t = self.binary(a, b, "mul", |x, y| x * y)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(Cow::Owned(t), Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, c: f32) -> Var {
        let t = self.value(a).map(|v| v * c);
        let ng = self.needs(&[a]);
        self.push(Cow::Owned(t), Op::Scale(a, c), ng)
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|v| 1.0 - v);
        let ng = self.needs(&[a]);
        self.push(Cow::Owned(t), Op::OneMinus(a), ng)
    }

    pub fn activation(&mut self, kind: Activation, a: Var) -> Var {
        let t = activation(kind, self.value(a));
        let op = match kind {
            Activation::Relu => Op::Relu(a),
            Activation::Tanh => Op::Tanh(a),
            Activation::Elu => Op::Elu(a),
            Activation::Abs => Op::Abs(a),
            Activation::Sigmoid => Op::Sigmoid(a),
        };
        let ng = self.needs(&[a]);
        self.push(Cow::Owned(t), op, ng)
    }

    /// Smallest `|x|` fed to a non-differentiable point (relu, abs) that
    /// lies on a gradient path; `f32::INFINITY` when there is none.
    pub fn kink_margin(&self) -> f32 {
        self.kink_inputs().map(|v| v.abs()).fold(f32::INFINITY, f32::min)
    }

    /// Which side of its kink every relu/abs input lies on, in graph order.
    pub fn kink_sides(&self) -> Vec<bool> {
        self.kink_inputs().map(|v| v > 0.0).collect()
    }

    fn kink_inputs(&self) -> impl Iterator<Item = f32> + '_ {
        self.nodes
            .iter()
            .filter(|n| n.needs_grad)
            .filter_map(|n| match n.op {
                Op::Relu(a) | Op::Abs(a) => Some(a),
                _ => None,
            })
            .flat_map(|a| self.value(a).data().iter().copied())
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activation(Activation::Relu, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.activation(Activation::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.activation(Activation::Tanh, a)
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(NnError::dim("concat_cols", rows, t.rows()));
            }
            cols += t.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let t = Tensor::matrix(rows, cols, data)?;
        let ng = self.needs(parts);
        Ok(self.push(Cow::Owned(t), Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NnError> {
        let ta = self.value(a);
        if start + len > ta.cols() || len == 0 {
            return Err(NnError::dim("slice_cols", ta.cols(), start + len));
        }
        let rows = ta.rows();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&ta.row(r)[start..start + len]);
        }
        let t = Tensor::matrix(rows, len, data)?;
        let ng = self.needs(&[a]);
        Ok(self.push(Cow::Owned(t), Op::SliceCols { a, start }, ng))
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(NnError::dim("concat_rows", cols, t.cols()));
            }
            data.extend_from_slice(t.data());
        }
        let rows = data.len() / cols;
        let t = Tensor::matrix(rows, cols, data)?;
        let ng = self.needs(parts);
        Ok(self.push(Cow::Owned(t), Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NnError> {
        let ta = self.value(a);
        if start + len > ta.rows() || len == 0 {
            return Err(NnError::dim("slice_rows", ta.rows(), start + len));
        }
        let c = ta.cols();
        let t = Tensor::matrix(len, c, ta.data()[start * c..(start + len) * c].to_vec())?;
        let ng = self.needs(&[a]);
        Ok(self.push(Cow::Owned(t), Op::SliceRows { a, start }, ng))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NnError> {
        let t = self.value(a).clone().reshape(shape)?;
        let ng = self.needs(&[a]);
        Ok(self.push(Cow::Owned(t), Op::Reshape(a), ng))
    }

    /// Picks column `idx[r]` of every row, giving `[rows x 1]`.
    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Result<Var, NnError> {
        let ta = self.value(a);
        if idx.len() != ta.rows() {
            return Err(NnError::dim("gather", ta.rows(), idx.len()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= ta.cols()) {
            return Err(NnError::dim("gather index", format!("< {}", ta.cols()), bad));
        }
        let data = idx.iter().enumerate().map(|(r, &c)| ta.row(r)[c]).collect();
        let t = Tensor::matrix(idx.len(), 1, data)?;
        let ng = self.needs(&[a]);
        Ok(self.push(Cow::Owned(t), Op::Gather { a, idx: idx.to_vec() }, ng))
    }

    /// Per-row vector-matrix product: `q` is `[R x n]`, `w` is `[R x n*e]`
    /// holding a row-major `[n x e]` matrix per row; result is `[R x e]`.
    pub fn row_vec_mat(&mut self, q: Var, w: Var) -> Result<Var, NnError> {
        let (tq, tw) = (self.value(q), self.value(w));
        let (rows, n) = (tq.rows(), tq.cols());
        if tw.rows() != rows || tw.cols() % n != 0 {
            return Err(NnError::dim("row_vec_mat", format!("[{rows} x {n}*e]"), format!("{:?}", tw.shape())));
        }
        let e = tw.cols() / n;
        let mut data = vec![0.0f32; rows * e];
        for r in 0..rows {
            let out = &mut data[r * e..(r + 1) * e];
            let wr = tw.row(r);
            for (k, &qv) in tq.row(r).iter().enumerate() {
                axpy(qv, &wr[k * e..(k + 1) * e], out);
            }
        }
        let t = Tensor::matrix(rows, e, data)?;
        let ng = self.needs(&[q, w]);
        Ok(self.push(Cow::Owned(t), Op::RowVecMat { q, w }, ng))
    }

    /// Row-wise inner product, `[R x c] . [R x c] -> [R x 1]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows() != tb.rows() || ta.cols() != tb.cols() {
            return Err(NnError::dim("row_dot", format!("{:?}", ta.shape()), format!("{:?}", tb.shape())));
        }
        let rows = ta.rows();
        let data = (0..rows)
            .map(|r| ta.row(r).iter().zip(tb.row(r)).map(|(&x, &y)| x as f64 * y as f64).sum::<f64>() as f32)
            .collect();
        let t = Tensor::matrix(rows, 1, data)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(Cow::Owned(t), Op::RowDot(a, b), ng))
    }

    /// Per-row squared error against a constant target, `[R x c] -> [R x 1]`.
    pub fn row_sq_err(&mut self, pred: Var, target: &Tensor) -> Result<Var, NnError> {
        let tp = self.value(pred);
        if tp.rows() != target.rows() || tp.cols() != target.cols() {
            return Err(NnError::dim("row_sq_err", format!("{:?}", tp.shape()), format!("{:?}", target.shape())));
        }
        let rows = tp.rows();
        let data = (0..rows)
            .map(|r| super::tensor::sq_err_sum(tp.row(r), target.row(r)) as f32)
            .collect();
        let t = Tensor::matrix(rows, 1, data)?;
        let ng = self.needs(&[pred]);
        Ok(self.push(
            Cow::Owned(t),
            Op::RowSqErr { pred, target: target.data().to_vec() },
            ng,
        ))
    }

    /// `sum_k weights[k] * a[k] / denom` over every element, as a scalar.
    pub fn weighted_sum(&mut self, a: Var, weights: &[f32], denom: f64) -> Result<Var, NnError> {
        let ta = self.value(a);
        if weights.len() != ta.len() {
            return Err(NnError::dim("weighted_sum", ta.len(), weights.len()));
        }
        if !(denom > 0.0) {
            return Err(NnError::Usage(format!("weighted_sum denominator {denom} must be positive")));
        }
        let s: f64 = ta.data().iter().zip(weights).map(|(&v, &w)| v as f64 * w as f64).sum();
        let t = Tensor::scalar((s / denom) as f32);
        let ng = self.needs(&[a]);
        Ok(self.push(
            Cow::Owned(t),
            Op::WeightedSum { a, weights: weights.to_vec(), denom },
            ng,
        ))
    }

    /// Sum of every element.
    pub fn sum(&mut self, a: Var) -> Result<Var, NnError> {
        let n = self.value(a).len();
        self.weighted_sum(a, &vec![1.0; n], 1.0)
    }

    /// Mean of every element.
    pub fn mean(&mut self, a: Var) -> Result<Var, NnError> {
        let n = self.value(a).len();
        self.weighted_sum(a, &vec![1.0; n], n as f64)
    }

    /// Per-row softmax cross-entropy against integer labels, `[R x c] -> [R x 1]`.
    pub fn softmax_xent(&mut self, logits: Var, labels: &[usize]) -> Result<Var, NnError> {
        let tl = self.value(logits);
        let (rows, c) = (tl.rows(), tl.cols());
        if labels.len() != rows {
            return Err(NnError::dim("softmax_xent", rows, labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(NnError::dim("softmax_xent label", format!("< {c}"), bad));
        }
        let mut probs = vec![0.0f32; rows * c];
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = tl.row(r);
            let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let z: f64 = row.iter().map(|&v| ((v - m) as f64).exp()).sum();
            for k in 0..c {
                probs[r * c + k] = (((row[k] - m) as f64).exp() / z) as f32;
            }
            out.push((z.ln() - (row[labels[r]] - m) as f64) as f32);
        }
        let t = Tensor::matrix(rows, 1, out)?;
        let ng = self.needs(&[logits]);
        Ok(self.push(
            Cow::Owned(t),
            Op::SoftmaxXent { logits, labels: labels.to_vec(), probs },
            ng,
        ))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NnError> {
        if loss.tape != self.id || loss.index() >= self.nodes.len() {
            return Err(NnError::Usage("backward called on a value not recorded by this tape".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(NnError::dim("backward", "scalar loss", format!("{:?}", self.value(loss).shape())));
        }
        let mut grads: Vec<Option<Vec<f32>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.index()] = Some(vec![1.0]);

        for i in (0..=loss.index()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let y = node.value.data();
            match &node.op {
                Op::Const => {}
                Op::Param { .. } => {
                    grads[i] = Some(g);
                }
                Op::Linear { x, w, b } => {
                    let tx = self.value(*x);
                    let tw = self.value(*w);
                    let (rows, inp, out) = (tx.rows(), tx.cols(), tw.rows());
                    if self.node(*x).needs_grad {
                        linear_grad_input(&g, tw.data(), inp, slot(&mut grads, *x, rows * inp));
                    }
                    if self.node(*w).needs_grad {
                        let mut acc = vec![0.0f64; out * inp];
                        linear_grad_weight(&g, tx.data(), inp, &mut acc);
                        add_f64(slot(&mut grads, *w, out * inp), &acc);
                    }
                    if let Some(b) = b {
                        if self.node(*b).needs_grad {
                            let mut acc = vec![0.0f64; out];
                            for r in 0..rows {
                                for o in 0..out {
                                    acc[o] += g[r * out + o] as f64;
                                }
                            }
                            add_f64(slot(&mut grads, *b, out), &acc);
                        }
                    }
                }
                Op::Add(a, b) => {
                    self.acc_map(&mut grads, *a, &g, |gv, _| gv);
                    self.acc_map(&mut grads, *b, &g, |gv, _| gv);
                }
                Op::Sub(a, b) => {
                    self.acc_map(&mut grads, *a, &g, |gv, _| gv);
                    self.acc_map(&mut grads, *b, &g, |gv, _| -gv);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                    self.acc_map(&mut grads, *a, &g, |gv, k| gv * tb[k]);
                    self.acc_map(&mut grads, *b, &g, |gv, k| gv * ta[k]);
                }
                Op::Scale(a, c) => self.acc_map(&mut grads, *a, &g, |gv, _| gv * c),
                Op::OneMinus(a) => self.acc_map(&mut grads, *a, &g, |gv, _| -gv),
                Op::Sigmoid(a) => self.acc_map(&mut grads, *a, &g, |gv, k| gv * y[k] * (1.0 - y[k])),
                Op::Tanh(a) => self.acc_map(&mut grads, *a, &g, |gv, k| gv * (1.0 - y[k] * y[k])),
                Op::Relu(a) => {
                    let x = self.value(*a).data();
                    self.acc_map(&mut grads, *a, &g, |gv, k| if x[k] > 0.0 { gv } else { 0.0 })
                }
                Op::Elu(a) => {
                    let x = self.value(*a).data();
                    self.acc_map(&mut grads, *a, &g, |gv, k| if x[k] > 0.0 { gv } else { gv * (y[k] + 1.0) })
                }
                Op::Abs(a) => {
                    let x = self.value(*a).data();
                    self.acc_map(&mut grads, *a, &g, |gv, k| {
                        if x[k] > 0.0 {
                            gv
                        } else if x[k] < 0.0 {
                            -gv
                        } else {
                            0.0
                        }
                    })
                }
                Op::ConcatCols(parts) => {
                    let rows = node.value.rows();
                    let total = node.value.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.value(p).cols();
                        if self.node(p).needs_grad {
                            let gp = slot(&mut grads, p, rows * c);
                            for r in 0..rows {
                                let src = &g[r * total + offset..r * total + offset + c];
                                for (d, s) in gp[r * c..(r + 1) * c].iter_mut().zip(src) {
                                    *d += s;
                                }
                            }
                        }
                        offset += c;
                    }
                }
                Op::SliceCols { a, start } => {
                    let ta = self.value(*a);
                    let (rows, c) = (ta.rows(), ta.cols());
                    let len = node.value.cols();
                    let ga = slot(&mut grads, *a, rows * c);
                    for r in 0..rows {
                        for k in 0..len {
                            ga[r * c + start + k] += g[r * len + k];
                        }
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        if self.node(p).needs_grad {
                            let gp = slot(&mut grads, p, n);
                            for (d, s) in gp.iter_mut().zip(&g[offset..offset + n]) {
                                *d += s;
                            }
                        }
                        offset += n;
                    }
                }
                Op::SliceRows { a, start } => {
                    let ta = self.value(*a);
                    let c = ta.cols();
                    let n = ta.len();
                    let ga = slot(&mut grads, *a, n);
                    for (d, s) in ga[start * c..start * c + g.len()].iter_mut().zip(&g) {
                        *d += s;
                    }
                }
                Op::Reshape(a) => self.acc_map(&mut grads, *a, &g, |gv, _| gv),
                Op::Gather { a, idx } => {
                    let ta = self.value(*a);
                    let c = ta.cols();
                    let ga = slot(&mut grads, *a, ta.len());
                    for (r, &k) in idx.iter().enumerate() {
                        ga[r * c + k] += g[r];
                    }
                }
                Op::RowVecMat { q, w } => {
                    let (tq, tw) = (self.value(*q), self.value(*w));
                    let (rows, n) = (tq.rows(), tq.cols());
                    let e = tw.cols() / n;
                    if self.node(*q).needs_grad {
                        let gq = slot(&mut grads, *q, rows * n);
                        for r in 0..rows {
                            let gr = &g[r * e..(r + 1) * e];
                            let wr = tw.row(r);
                            for k in 0..n {
                                gq[r * n + k] += dot(gr, &wr[k * e..(k + 1) * e]);
                            }
                        }
                    }
                    if self.node(*w).needs_grad {
                        let gw = slot(&mut grads, *w, rows * n * e);
                        for r in 0..rows {
                            let gr = &g[r * e..(r + 1) * e];
                            for (k, &qv) in tq.row(r).iter().enumerate() {
                                let base = r * n * e + k * e;
                                axpy(qv, gr, &mut gw[base..base + e]);
                            }
                        }
                    }
                }
                Op::RowDot(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let c = ta.cols();
                    self.acc_map(&mut grads, *a, &[], |_, k| g[k / c] * tb.data()[k]);
                    self.acc_map(&mut grads, *b, &[], |_, k| g[k / c] * ta.data()[k]);
                }
                Op::RowSqErr { pred, target } => {
                    let tp = self.value(*pred);
                    let c = tp.cols();
                    let p = tp.data();
                    self.acc_map(&mut grads, *pred, &[], |_, k| 2.0 * (p[k] - target[k]) * g[k / c]);
                }
                Op::WeightedSum { a, weights, denom } => {
                    let s = g[0] as f64 / denom;
                    self.acc_map(&mut grads, *a, &[], |_, k| (weights[k] as f64 * s) as f32);
                }
                Op::SoftmaxXent { logits, labels, probs } => {
                    let c = self.value(*logits).cols();
                    self.acc_map(&mut grads, *logits, &[], |_, k| {
                        let r = k / c;
                        let onehot = if labels[r] == k % c { 1.0 } else { 0.0 };
                        g[r] * (probs[k] - onehot)
                    });
                }
            }
        }

        let mut params = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param { bind, index } = node.op {
                params.push((bind, index, grads[i].take(), node.value.shape().to_vec()));
            }
        }
        Ok(Gradients { params })
    }

    /// Adds `f(g[k], k)` into the gradient slot of `a`, where `g` may be
    /// empty when `f` reads its own source.
    fn acc_map(&self, grads: &mut [Option<Vec<f32>>], a: Var, g: &[f32], f: impl Fn(f32, usize) -> f32) {
        if !self.node(a).needs_grad {
            return;
        }
        let n = self.value(a).len();
        let ga = slot(grads, a, n);
        if g.is_empty() {
            for (k, d) in ga.iter_mut().enumerate() {
                *d += f(0.0, k);
            }
        } else {
            for (k, d) in ga.iter_mut().enumerate() {
                *d += f(g[k], k);
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f32>>], v: Var, n: usize) -> &mut Vec<f32> {
    grads[v.index()].get_or_insert_with(|| vec![0.0; n])
}

fn add_f64(dst: &mut [f32], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = (*d as f64 + s) as f32;
    }
}

/// Parameter gradients produced by [`Tape::backward`].
pub struct Gradients {
    params: Vec<(u32, usize, Option<Vec<f32>>, Vec<usize>)>,
}

impl Gradients {
    /// Gradients for every tensor of a bound set, zero where the loss does
    /// not depend on the parameter.
    pub fn for_bound(&self, bound: &Bound) -> Vec<Tensor> {
        let mut out: Vec<Option<Tensor>> = vec![None; bound.vars.len()];
        for (bind, index, g, shape) in &self.params {
            if *bind != bound.id {
                continue;
            }
            let t = match g {
                Some(data) => Tensor::new(shape, data.clone()).expect("gradient shape"),
                None => Tensor::zeros(shape),
            };
            out[*index] = Some(t);
        }
        out.into_iter().map(|t| t.expect("every bound parameter recorded")).collect()
    }
}
