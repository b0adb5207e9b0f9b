//! Dense 2-D tensors with a tape-based reverse-mode differentiator.
//!
//! A [`Graph`] records every operation of one forward pass. Calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and returns
//! the gradient of every node; [`Graph::param_grads`] collects the ones that
//! belong to a [`ParamSet`].

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::branches::PAD;
use crate::error::{GtmpError, Result};

/// Row-major matrix of `f64`. Vectors are `1 x n`, scalars `1 x 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(GtmpError::Shape(format!("{} values for a {rows}x{cols} tensor", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn scalar(v: f64) -> Self {
        Self { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn row(values: &[f64]) -> Self {
        Self { rows: 1, cols: values.len(), data: values.to_vec() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    fn same_shape(&self, other: &Tensor, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(GtmpError::Shape(format!("{what}: {:?} vs {:?}", self.shape(), other.shape())));
        }
        Ok(())
    }

    fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }
}

/// `c = a * b` (plus `beta * c`), with optional transposes, via `matrixmultiply`.
fn gemm(a: &Tensor, ta: bool, b: &Tensor, tb: bool, c: &mut Tensor, beta: f64) {
    let (m, k) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let n = if tb { b.rows } else { b.cols };
    debug_assert_eq!(c.shape(), [m, n]);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if tb { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    // SAFETY: strides describe the exact row-major layouts of a, b and c.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
}

/// Node handle inside a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Reduction applied over each segment of rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduce {
    Sum,
    Mean,
    Max,
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Vec<f64>),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Abs(Var),
    Square(Var),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Segment { input: Var, offsets: Vec<usize>, kind: Reduce, argmax: Vec<usize> },
    SumRows(Var),
    MeanRows(Var),
    SumCols(Var),
    SumAll(Var),
    Softmax(Var),
    LogSoftmax(Var),
    CumsumCols(Var),
    Pick(Var, Vec<(usize, usize)>),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Computation record of one forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<usize, Var>,
}

/// Gradient of a scalar with respect to every graph node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A constant: participates in the forward pass, receives no parameter gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    /// Leaf for parameter `id` of `params`; repeated calls return the same node.
    pub fn param(&mut self, params: &ParamSet, id: usize) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(params.tensors[id].clone(), Op::Param);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols != tb.rows {
            return Err(GtmpError::Shape(format!("matmul {:?} x {:?}", ta.shape(), tb.shape())));
        }
        let mut out = Tensor::zeros(ta.rows, tb.cols);
        gemm(ta, false, tb, false, &mut out, 0.0);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// Adds a `1 x n` row to every row of an `m x n` tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tb.rows != 1 || tb.cols != tx.cols {
            return Err(GtmpError::Shape(format!("add_bias {:?} + {:?}", tx.shape(), tb.shape())));
        }
        let mut out = tx.clone();
        for row in out.data.chunks_mut(tx.cols.max(1)) {
            for (o, b) in row.iter_mut().zip(&tb.data) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddBias(x, bias)))
    }

    fn zip_op(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        ta.same_shape(tb, what)?;
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor { rows: ta.rows, cols: ta.cols, data };
        Ok(self.push(out, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Multiplies every row elementwise by the constant `row`.
    pub fn mul_row(&mut self, x: Var, row: &[f64]) -> Result<Var> {
        let tx = self.value(x);
        if row.len() != tx.cols {
            return Err(GtmpError::Shape(format!("mul_row: {} weights for {} columns", row.len(), tx.cols)));
        }
        let mut out = tx.clone();
        for r in out.data.chunks_mut(tx.cols.max(1)) {
            for (o, w) in r.iter_mut().zip(row) {
                *o *= w;
            }
        }
        Ok(self.push(out, Op::MulRow(x, row.to_vec())))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v + c);
        self.push(out, Op::AddScalar(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        self.push(out, Op::Tanh(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::abs);
        self.push(out, Op::Abs(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * v);
        self.push(out, Op::Square(x))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map(|&p| self.value(p).rows).unwrap_or(0);
        if parts.iter().any(|&p| self.value(p).rows != rows) {
            return Err(GtmpError::Shape("concat_cols: row counts differ".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let t = self.value(p);
            for r in 0..rows {
                out.data[r * cols + offset..r * cols + offset + t.cols].copy_from_slice(t.row_slice(r));
            }
            offset += t.cols;
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Row `r` of the result is row `index[r]` of `x`, or zeros when `index[r] == PAD`.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let cols = tx.cols;
        let mut out = Tensor::zeros(index.len(), cols);
        for (r, &src) in index.iter().enumerate() {
            if src == PAD {
                continue;
            }
            if src >= tx.rows {
                return Err(GtmpError::Shape(format!("gather_rows: row {src} of {}", tx.rows)));
            }
            out.data[r * cols..(r + 1) * cols].copy_from_slice(tx.row_slice(src));
        }
        Ok(self.push(out, Op::GatherRows(x, index.to_vec())))
    }

    /// Reduces consecutive row ranges `offsets[s]..offsets[s + 1]`; empty ranges give zero rows.
    pub fn segment_reduce(&mut self, x: Var, offsets: &[usize], kind: Reduce) -> Result<Var> {
        let tx = self.value(x);
        if offsets.is_empty() || *offsets.last().unwrap() != tx.rows || offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(GtmpError::Shape("segment_reduce: offsets do not tile the input rows".into()));
        }
        let segs = offsets.len() - 1;
        let cols = tx.cols;
        let mut out = Tensor::zeros(segs, cols);
        let mut argmax = Vec::new();
        if kind == Reduce::Max {
            argmax = vec![PAD; segs * cols];
        }
        for s in 0..segs {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            if lo == hi {
                continue;
            }
            let dst = &mut out.data[s * cols..(s + 1) * cols];
            match kind {
                Reduce::Sum | Reduce::Mean => {
                    for r in lo..hi {
                        for (d, v) in dst.iter_mut().zip(tx.row_slice(r)) {
                            *d += v;
                        }
                    }
                    if kind == Reduce::Mean {
                        let inv = 1.0 / (hi - lo) as f64;
                        dst.iter_mut().for_each(|d| *d *= inv);
                    }
                }
                Reduce::Max => {
                    dst.copy_from_slice(tx.row_slice(lo));
                    argmax[s * cols..(s + 1) * cols].iter_mut().for_each(|a| *a = lo);
                    for r in lo + 1..hi {
                        for (c, &v) in tx.row_slice(r).iter().enumerate() {
                            if v > dst[c] {
                                dst[c] = v;
                                argmax[s * cols + c] = r;
                            }
                        }
                    }
                }
            }
        }
        Ok(self.push(out, Op::Segment { input: x, offsets: offsets.to_vec(), kind, argmax }))
    }

    /// Column sums: `m x n -> 1 x n`.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let mut out = Tensor::zeros(1, tx.cols);
        for r in 0..tx.rows {
            for (o, v) in out.data.iter_mut().zip(tx.row_slice(r)) {
                *o += v;
            }
        }
        self.push(out, Op::SumRows(x))
    }

    /// Column means: `m x n -> 1 x n` (zeros when `m == 0`).
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let mut out = Tensor::zeros(1, tx.cols);
        if tx.rows > 0 {
            for r in 0..tx.rows {
                for (o, v) in out.data.iter_mut().zip(tx.row_slice(r)) {
                    *o += v;
                }
            }
            let inv = 1.0 / tx.rows as f64;
            out.data.iter_mut().for_each(|o| *o *= inv);
        }
        self.push(out, Op::MeanRows(x))
    }

    /// Row sums: `m x n -> m x 1`.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let data = (0..tx.rows).map(|r| tx.row_slice(r).iter().sum()).collect();
        self.push(Tensor { rows: tx.rows, cols: 1, data }, Op::SumCols(x))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(x))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let mut out = tx.clone();
        for r in out.data.chunks_mut(tx.cols.max(1)) {
            let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in r.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            r.iter_mut().for_each(|v| *v /= z);
        }
        self.push(out, Op::Softmax(x))
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let mut out = tx.clone();
        for r in out.data.chunks_mut(tx.cols.max(1)) {
            let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + r.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            r.iter_mut().for_each(|v| *v -= lse);
        }
        self.push(out, Op::LogSoftmax(x))
    }

    /// Running sum along each row.
    pub fn cumsum_cols(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let mut out = tx.clone();
        for r in out.data.chunks_mut(tx.cols.max(1)) {
            for c in 1..r.len() {
                r[c] += r[c - 1];
            }
        }
        self.push(out, Op::CumsumCols(x))
    }

    /// Selects entries `(row, col)` into a `1 x len` row.
    pub fn pick(&mut self, x: Var, at: &[(usize, usize)]) -> Result<Var> {
        let tx = self.value(x);
        let mut data = Vec::with_capacity(at.len());
        for &(r, c) in at {
            if r >= tx.rows || c >= tx.cols {
                return Err(GtmpError::Shape(format!("pick ({r},{c}) from {:?}", tx.shape())));
            }
            data.push(tx.get(r, c));
        }
        Ok(self.push(Tensor { rows: 1, cols: at.len(), data }, Op::Pick(x, at.to_vec())))
    }

    /// Reverse accumulation from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != [1, 1] {
            return Err(GtmpError::Contract(format!("backward needs a scalar, got {:?}", self.value(loss).shape())));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let out = &node.value;
            match &node.op {
                Op::Input | Op::Param => {}
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let mut ga = Tensor::zeros(ta.rows, ta.cols);
                    gemm(&g, false, tb, true, &mut ga, 0.0);
                    let mut gb = Tensor::zeros(tb.rows, tb.cols);
                    gemm(ta, true, &g, false, &mut gb, 0.0);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddBias(x, b) => {
                    let mut gb = Tensor::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (o, v) in gb.data.iter_mut().zip(g.row_slice(r)) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *b, gb);
                    acc(&mut grads, *x, g.clone());
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.map(|v| -v));
                    acc(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let ga = Tensor {
                        rows: g.rows,
                        cols: g.cols,
                        data: g.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect(),
                    };
                    let gb = Tensor {
                        rows: g.rows,
                        cols: g.cols,
                        data: g.data.iter().zip(&ta.data).map(|(x, y)| x * y).collect(),
                    };
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MulRow(x, row) => {
                    let mut gx = g.clone();
                    for r in gx.data.chunks_mut(g.cols.max(1)) {
                        for (o, w) in r.iter_mut().zip(row) {
                            *o *= w;
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Scale(x, c) => acc(&mut grads, *x, g.map(|v| v * c)),
                Op::AddScalar(x) => acc(&mut grads, *x, g.clone()),
                Op::Relu(x) => {
                    let tx = self.value(*x);
                    let data = g.data.iter().zip(&tx.data).map(|(&d, &v)| if v > 0.0 { d } else { 0.0 }).collect();
                    acc(&mut grads, *x, Tensor { rows: g.rows, cols: g.cols, data });
                }
                Op::Tanh(x) => {
                    let data = g.data.iter().zip(&out.data).map(|(&d, &y)| d * (1.0 - y * y)).collect();
                    acc(&mut grads, *x, Tensor { rows: g.rows, cols: g.cols, data });
                }
                Op::Abs(x) => {
                    let tx = self.value(*x);
                    let data = g.data.iter().zip(&tx.data).map(|(&d, &v)| d * sign(v)).collect();
                    acc(&mut grads, *x, Tensor { rows: g.rows, cols: g.cols, data });
                }
                Op::Square(x) => {
                    let tx = self.value(*x);
                    let data = g.data.iter().zip(&tx.data).map(|(&d, &v)| 2.0 * d * v).collect();
                    acc(&mut grads, *x, Tensor { rows: g.rows, cols: g.cols, data });
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols;
                        let mut gp = Tensor::zeros(g.rows, w);
                        for r in 0..g.rows {
                            gp.data[r * w..(r + 1) * w]
                                .copy_from_slice(&g.data[r * g.cols + offset..r * g.cols + offset + w]);
                        }
                        offset += w;
                        acc(&mut grads, p, gp);
                    }
                }
                Op::GatherRows(x, index) => {
                    let tx = self.value(*x);
                    let mut gx = Tensor::zeros(tx.rows, tx.cols);
                    for (r, &src) in index.iter().enumerate() {
                        if src == PAD {
                            continue;
                        }
                        for (o, v) in gx.data[src * tx.cols..(src + 1) * tx.cols].iter_mut().zip(g.row_slice(r)) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Segment { input, offsets, kind, argmax } => {
                    let tx = self.value(*input);
                    let cols = tx.cols;
                    let mut gx = Tensor::zeros(tx.rows, cols);
                    for s in 0..offsets.len() - 1 {
                        let (lo, hi) = (offsets[s], offsets[s + 1]);
                        if lo == hi {
                            continue;
                        }
                        let gs = g.row_slice(s);
                        match kind {
                            Reduce::Sum | Reduce::Mean => {
                                let w = if *kind == Reduce::Mean { 1.0 / (hi - lo) as f64 } else { 1.0 };
                                for r in lo..hi {
                                    for (o, v) in gx.data[r * cols..(r + 1) * cols].iter_mut().zip(gs) {
                                        *o += v * w;
                                    }
                                }
                            }
                            Reduce::Max => {
                                for c in 0..cols {
                                    gx.data[argmax[s * cols + c] * cols + c] += gs[c];
                                }
                            }
                        }
                    }
                    acc(&mut grads, *input, gx);
                }
                Op::SumRows(x) | Op::MeanRows(x) => {
                    let tx = self.value(*x);
                    let w = if matches!(node.op, Op::MeanRows(_)) { 1.0 / tx.rows.max(1) as f64 } else { 1.0 };
                    let mut gx = Tensor::zeros(tx.rows, tx.cols);
                    for r in gx.data.chunks_mut(tx.cols.max(1)) {
                        for (o, v) in r.iter_mut().zip(&g.data) {
                            *o = v * w;
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::SumCols(x) => {
                    let tx = self.value(*x);
                    let mut gx = Tensor::zeros(tx.rows, tx.cols);
                    for (r, row) in gx.data.chunks_mut(tx.cols.max(1)).enumerate() {
                        row.iter_mut().for_each(|o| *o = g.data[r]);
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::SumAll(x) => {
                    let tx = self.value(*x);
                    let gx = Tensor { rows: tx.rows, cols: tx.cols, data: vec![g.data[0]; tx.data.len()] };
                    acc(&mut grads, *x, gx);
                }
                Op::Softmax(x) => {
                    let mut gx = g.clone();
                    for (gr, yr) in gx.data.chunks_mut(g.cols.max(1)).zip(out.data.chunks(g.cols.max(1))) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for (o, y) in gr.iter_mut().zip(yr) {
                            *o = y * (*o - dot);
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::LogSoftmax(x) => {
                    let mut gx = g.clone();
                    for (gr, yr) in gx.data.chunks_mut(g.cols.max(1)).zip(out.data.chunks(g.cols.max(1))) {
                        let total: f64 = gr.iter().sum();
                        for (o, y) in gr.iter_mut().zip(yr) {
                            *o -= y.exp() * total;
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::CumsumCols(x) => {
                    let mut gx = g.clone();
                    for r in gx.data.chunks_mut(g.cols.max(1)) {
                        for c in (0..r.len().saturating_sub(1)).rev() {
                            r[c] += r[c + 1];
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Pick(x, at) => {
                    let tx = self.value(*x);
                    let mut gx = Tensor::zeros(tx.rows, tx.cols);
                    for (q, &(r, c)) in at.iter().enumerate() {
                        gx.data[r * tx.cols + c] += g.data[q];
                    }
                    acc(&mut grads, *x, gx);
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Gradients for every tensor of `params`, zeros where a parameter was unused.
    pub fn param_grads(&self, grads: &Gradients, params: &ParamSet) -> Vec<Tensor> {
        params
            .tensors
            .iter()
            .enumerate()
            .map(|(id, t)| {
                self.params
                    .get(&id)
                    .and_then(|v| grads.get(*v).cloned())
                    .unwrap_or_else(|| Tensor::zeros(t.rows, t.cols))
            })
            .collect()
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Named, ordered collection of learnable tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor) -> Result<usize> {
        if self.index.contains_key(name) {
            return Err(GtmpError::Contract(format!("duplicate parameter {name}")));
        }
        self.names.push(name.to_string());
        self.tensors.push(t);
        self.index.insert(name.to_string(), self.names.len() - 1);
        Ok(self.names.len() - 1)
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation.
    pub fn insert_uniform<R: Rng>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut R,
    ) -> Result<usize> {
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
        self.insert(name, Tensor { rows, cols, data })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensor(&self, id: usize) -> &Tensor {
        &self.tensors[id]
    }

    pub fn tensor_mut(&mut self, id: usize) -> &mut Tensor {
        &mut self.tensors[id]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|i| &self.tensors[i])
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    /// Copies every tensor whose name exists in `other` with the same shape.
    ///
    /// Returns the number of tensors copied.
    pub fn load_matching(&mut self, other: &ParamSet, mut keep: impl FnMut(&str) -> bool) -> Result<usize> {
        let mut copied = 0;
        for (name, t) in other.names.iter().zip(&other.tensors) {
            if !keep(name) {
                continue;
            }
            let Some(id) = self.id(name) else { continue };
            if self.tensors[id].shape() != t.shape() {
                return Err(GtmpError::Checkpoint(format!(
                    "{name}: checkpoint shape {:?}, model shape {:?}",
                    t.shape(),
                    self.tensors[id].shape()
                )));
            }
            self.tensors[id] = t.clone();
            copied += 1;
        }
        Ok(copied)
    }

    pub fn to_checkpoint_json(&self) -> String {
        let doc = CheckpointDoc {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            params: self
                .names
                .iter()
                .zip(&self.tensors)
                .map(|(n, t)| CheckpointEntry { name: n.clone(), shape: t.shape().to_vec(), data: t.data.clone() })
                .collect(),
        };
        serde_json::to_string(&doc).expect("checkpoint serialization cannot fail")
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self> {
        let doc: CheckpointDoc =
            serde_json::from_str(text).map_err(|e| GtmpError::Checkpoint(format!("unreadable checkpoint: {e}")))?;
        if doc.format != CHECKPOINT_FORMAT || doc.version != CHECKPOINT_VERSION {
            return Err(GtmpError::Checkpoint(format!("unsupported checkpoint {} v{}", doc.format, doc.version)));
        }
        let mut out = ParamSet::new();
        for e in doc.params {
            if e.shape.len() != 2 {
                return Err(GtmpError::Checkpoint(format!("{}: expected a 2-D shape", e.name)));
            }
            let t = Tensor::from_vec(e.shape[0], e.shape[1], e.data).map_err(|err| GtmpError::Checkpoint(err.to_string()))?;
            out.insert(&e.name, t).map_err(|err| GtmpError::Checkpoint(err.to_string()))?;
        }
        Ok(out)
    }
}

const CHECKPOINT_FORMAT: &str = "gtmp-params";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    format: String,
    version: u32,
    params: Vec<CheckpointEntry>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointEntry {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

/// Layer widths `[in, hidden.., out]` and the activation between layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activation: Activation,
    /// Apply the activation after the last affine layer too.
    #[serde(default)]
    pub final_activation: bool,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activation: Activation) -> Self {
        Self { widths, activation, final_activation: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return Err(GtmpError::Config(format!("MLP widths {:?} need >= 1 layer and positive sizes", self.widths)));
        }
        Ok(())
    }
}

/// An MLP whose weights live in a [`ParamSet`] under `{prefix}.{layer}.w|b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    layers: Vec<(usize, usize)>,
}

impl Mlp {
    pub fn register<R: Rng>(params: &mut ParamSet, prefix: &str, spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::new();
        for (l, w) in spec.widths.windows(2).enumerate() {
            let wid = params.insert_uniform(&format!("{prefix}.{l}.w"), w[0], w[1], w[0], rng)?;
            let bid = params.insert_uniform(&format!("{prefix}.{l}.b"), 1, w[1], w[0], rng)?;
            layers.push((wid, bid));
        }
        Ok(Self { spec, layers })
    }

    /// Looks up an already-registered MLP by prefix.
    pub fn bind(params: &ParamSet, prefix: &str, spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::new();
        for (l, w) in spec.widths.windows(2).enumerate() {
            let find = |suffix: &str, shape: [usize; 2]| -> Result<usize> {
                let name = format!("{prefix}.{l}.{suffix}");
                let id = params.id(&name).ok_or_else(|| GtmpError::Checkpoint(format!("missing parameter {name}")))?;
                if params.tensor(id).shape() != shape {
                    return Err(GtmpError::Checkpoint(format!("{name} has shape {:?}", params.tensor(id).shape())));
                }
                Ok(id)
            };
            layers.push((find("w", [w[0], w[1]])?, find("b", [1, w[1]])?));
        }
        Ok(Self { spec, layers })
    }

    pub fn param_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }

    pub fn forward(&self, g: &mut Graph, params: &ParamSet, x: Var) -> Result<Var> {
        if g.value(x).cols != self.spec.widths[0] {
            return Err(GtmpError::Shape(format!(
                "MLP expects {} inputs, got {}",
                self.spec.widths[0],
                g.value(x).cols
            )));
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            let wv = g.param(params, w);
            let bv = g.param(params, b);
            let z = g.matmul(h, wv)?;
            h = g.add_bias(z, bv)?;
            if l < last || self.spec.final_activation {
                h = match self.spec.activation {
                    Activation::Relu => g.relu(h),
                    Activation::Tanh => g.tanh(h),
                    Activation::Identity => h,
                };
            }
        }
        Ok(h)
    }
}

/// Evaluates an MLP on a constant input without keeping the graph.
pub fn mlp_forward(mlp: &Mlp, params: &ParamSet, x: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let y = mlp.forward(&mut g, params, xv)?;
    Ok(g.value(y).clone())
}

/// First and second moment estimates for Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Tensor> = params.tensors.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect();
        Self { m: zeros.clone(), v: zeros, step: 0 }
    }
}

/// One bias-corrected Adam update. Parameters with `trainable[id] == false` are left untouched.
pub fn adam_step(params: &mut ParamSet, grads: &[Tensor], state: &mut AdamState, lr: f64, trainable: Option<&[bool]>) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - AdamState::BETA1.powi(t);
    let c2 = 1.0 - AdamState::BETA2.powi(t);
    for id in 0..params.tensors.len() {
        if trainable.is_some_and(|mask| !mask[id]) {
            continue;
        }
        let g = &grads[id].data;
        let (m, v) = (&mut state.m[id].data, &mut state.v[id].data);
        for (q, w) in params.tensors[id].data.iter_mut().enumerate() {
            m[q] = AdamState::BETA1 * m[q] + (1.0 - AdamState::BETA1) * g[q];
            v[q] = AdamState::BETA2 * v[q] + (1.0 - AdamState::BETA2) * g[q] * g[q];
            let mhat = m[q] / c1;
            let vhat = v[q] / c2;
            *w -= lr * mhat / (vhat.sqrt() + AdamState::EPS);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_and_zero_layers() {
        let mut params = ParamSet::new();
        params.insert("l.0.w", Tensor::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap()).unwrap();
        params.insert("l.0.b", Tensor::zeros(1, 2)).unwrap();
        let mlp = Mlp::bind(&params, "l", MlpSpec::new(vec![2, 2], Activation::Relu)).unwrap();
        let y = mlp_forward(&mlp, &params, &Tensor::row(&[1.0, 2.0])).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);

        let mut zero = ParamSet::new();
        zero.insert("z.0.w", Tensor::zeros(3, 2)).unwrap();
        zero.insert("z.0.b", Tensor::row(&[0.5, -1.5])).unwrap();
        let mlp = Mlp::bind(&zero, "z", MlpSpec::new(vec![3, 2], Activation::Relu)).unwrap();
        let y = mlp_forward(&mlp, &zero, &Tensor::row(&[4.0, -2.0, 9.0])).unwrap();
        assert_eq!(y.data(), &[0.5, -1.5]);

        let bad = mlp_forward(&mlp, &zero, &Tensor::row(&[1.0]));
        assert!(matches!(bad, Err(GtmpError::Shape(_))));
    }

    #[test]
    fn sum_of_params_has_unit_gradient() {
        let mut params = ParamSet::new();
        params.insert("a", Tensor::from_vec(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, 7.0]).unwrap()).unwrap();
        let mut g = Graph::new();
        let a = g.param(&params, 0);
        let s = g.sum_all(a);
        let grads = g.backward(s).unwrap();
        assert_eq!(g.param_grads(&grads, &params)[0].data(), &[1.0; 6]);
    }

    #[test]
    fn squared_norm_gradient_closed_form() {
        let w = Tensor::from_vec(2, 3, vec![0.3, -1.0, 2.0, 0.7, 0.1, -0.4]).unwrap();
        let x = [1.5, -0.5];
        let mut params = ParamSet::new();
        params.insert("w", w.clone()).unwrap();
        let mut g = Graph::new();
        // Row-vector convention: y = x W, loss = |y|^2, dL/dW = 2 x^T y.
        let xv = g.input(Tensor::row(&x));
        let wv = g.param(&params, 0);
        let y = g.matmul(xv, wv).unwrap();
        let sq = g.square(y);
        let loss = g.sum_all(sq);
        let grads = g.backward(loss).unwrap();
        let gw = &g.param_grads(&grads, &params)[0];
        let yv = g.value(y).clone();
        for r in 0..2 {
            for c in 0..3 {
                assert!((gw.get(r, c) - 2.0 * x[r] * yv.get(0, c)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn non_scalar_backward_is_rejected() {
        let mut g = Graph::new();
        let x = g.input(Tensor::row(&[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(GtmpError::Contract(_))));
    }

    #[test]
    fn adam_single_step_and_zero_gradient() {
        let mut params = ParamSet::new();
        params.insert("w", Tensor::row(&[1.0, -2.0, 0.5])).unwrap();
        let mut state = AdamState::new(&params);
        let g = vec![Tensor::row(&[0.3, -4.0, 1e-3])];
        let before = params.tensor(0).clone();
        adam_step(&mut params, &g, &mut state, 0.01, None);
        for q in 0..3 {
            let gq = g[0].data()[q];
            let expected = before.data()[q] - 0.01 * gq / (gq.abs() + AdamState::EPS);
            assert!((params.tensor(0).data()[q] - expected).abs() < 1e-12);
        }

        let after_first = params.tensor(0).clone();
        let m_before = state.m[0].clone();
        adam_step(&mut params, &[Tensor::zeros(1, 3)], &mut state, 0.01, Some(&[false]));
        assert_eq!(params.tensor(0), &after_first);
        assert_eq!(state.m[0], m_before);
    }

    #[test]
    fn adam_constant_gradient_step_tends_to_lr() {
        let mut params = ParamSet::new();
        params.insert("w", Tensor::row(&[0.0, 0.0])).unwrap();
        let mut state = AdamState::new(&params);
        let g = vec![Tensor::row(&[2.5, -0.1])];
        let mut prev = params.tensor(0).clone();
        for _ in 0..200 {
            adam_step(&mut params, &g, &mut state, 1e-3, None);
            let now = params.tensor(0).clone();
            let step: Vec<f64> = now.data().iter().zip(prev.data()).map(|(a, b)| a - b).collect();
            assert!((step[0] + 1e-3).abs() < 1e-6 && (step[1] - 1e-3).abs() < 1e-6);
            prev = now;
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = ParamSet::new();
        Mlp::register(&mut params, "m", MlpSpec::new(vec![4, 5, 2], Activation::Tanh), &mut rng).unwrap();
        params.insert("odd", Tensor::row(&[1e-300, -0.1, 1.0 / 3.0, f64::MIN_POSITIVE])).unwrap();
        let back = ParamSet::from_checkpoint_json(&params.to_checkpoint_json()).unwrap();
        assert_eq!(back.names(), params.names());
        for id in 0..params.len() {
            let a: Vec<u64> = params.tensor(id).data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = back.tensor(id).data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
        assert!(matches!(ParamSet::from_checkpoint_json("{}"), Err(GtmpError::Checkpoint(_))));
    }
}
