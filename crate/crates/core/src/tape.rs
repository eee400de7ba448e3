//! Reverse-mode differentiation over small dense `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Calling
//! [`Tape::backward`] on a scalar node walks the records in reverse and
//! returns the gradient of that scalar with respect to every node that
//! depends on a trainable parameter. Constants never receive gradient, which
//! is how frozen teacher features and stop-gradient distillation targets are
//! expressed.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix shape {rows}x{cols} does not match data length");
        Mat { rows, cols, data }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        let cols = data.len();
        Mat { rows: 1, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Mat { rows: rows.len(), cols, data }
    }

    pub fn scalar(v: f64) -> Self {
        Mat { rows: 1, cols: 1, data: vec![v] }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul inner dimension mismatch");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    fn zip_map(&self, other: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
        debug_assert_eq!(self.shape(), other.shape());
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    fn add_assign(&mut self, other: &Mat) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Gelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    LayerNormRows(Var, Vec<f64>),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    MeanRows(Var),
    Sum(Var),
    SumSquares(Var),
    L2NormalizeRows(Var, Vec<f64>),
    HuberMean(Var, f64),
    CrossEntropy(Var, usize),
    SurvivalNll(Var, usize, bool),
}

struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
}

/// Probability floor used inside the survival log-likelihood.
pub const PROB_CLAMP: f64 = 1e-7;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
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

fn huber(e: f64, delta: f64) -> f64 {
    let a = e.abs();
    if a <= delta {
        0.5 * e * e
    } else {
        delta * (a - 0.5 * delta)
    }
}

fn huber_grad(e: f64, delta: f64) -> f64 {
    if e.abs() <= delta {
        e
    } else {
        delta * e.signum()
    }
}

/// Negative log-likelihood of a discrete-time hazard model.
///
/// Returns the loss and, per bin, its derivative with respect to the logit.
/// Clamped probability terms contribute no derivative.
pub(crate) fn survival_nll_with_grad(logits: &[f64], bin: usize, event: bool) -> (f64, Vec<f64>, bool) {
    let mut loss = 0.0;
    let mut grad = vec![0.0; logits.len()];
    let mut clamped = false;
    let survived_upto = if event { bin } else { bin + 1 };
    for (b, &l) in logits.iter().enumerate().take(survived_upto) {
        let h = sigmoid(l);
        let s = 1.0 - h;
        if s < PROB_CLAMP {
            clamped = true;
            loss -= PROB_CLAMP.ln();
        } else {
            loss -= s.ln();
            grad[b] = h;
        }
    }
    if event {
        let h = sigmoid(logits[bin]);
        if h < PROB_CLAMP {
            clamped = true;
            loss -= PROB_CLAMP.ln();
        } else {
            loss -= h.ln();
            grad[bin] = h - 1.0;
        }
    }
    (loss, grad, clamped)
}

/// Records a forward pass for later differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: HashMap<usize, Var>,
    clamp_events: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.data[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of probability clamps triggered by survival terms on this tape.
    pub fn clamp_events(&self) -> usize {
        self.clamp_events
    }

    /// A value that never receives gradient.
    pub fn constant(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf, false)
    }

    /// A trainable leaf. Binding the same parameter id twice returns the same node.
    pub fn param(&mut self, id: usize, value: &Mat) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let v = self.push(value.clone(), Op::Leaf, true);
        self.bound.insert(id, v);
        v
    }

    /// Copy of `v` cut off from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let m = self.value(v).clone();
        self.constant(m)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ma, mb) = (self.value(a), self.value(b));
        assert_eq!(ma.shape(), mb.shape(), "add shape mismatch");
        let out = ma.zip_map(mb, |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (ma, mb) = (self.value(a), self.value(b));
        assert_eq!(ma.shape(), mb.shape(), "sub shape mismatch");
        let out = ma.zip_map(mb, |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Sub(a, b), ng)
    }

    /// `a (r x c) + b (1 x c)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (ma, mb) = (self.value(a), self.value(b));
        assert_eq!((1, ma.cols), mb.shape(), "add_row shape mismatch");
        let mut out = ma.clone();
        for r in 0..out.rows {
            for c in 0..out.cols {
                out.data[r * out.cols + c] += mb.data[c];
            }
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::AddRow(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (ma, mb) = (self.value(a), self.value(b));
        assert_eq!(ma.shape(), mb.shape(), "mul shape mismatch");
        let out = ma.zip_map(mb, |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Mul(a, b), ng)
    }

    /// Scales row `i` of `a (r x c)` by `g[i]` where `g` is `r x 1`.
    pub fn mul_col(&mut self, a: Var, g: Var) -> Var {
        let (ma, mg) = (self.value(a), self.value(g));
        assert_eq!((ma.rows, 1), mg.shape(), "mul_col shape mismatch");
        let mut out = ma.clone();
        for r in 0..out.rows {
            let s = mg.data[r];
            for v in &mut out.data[r * out.cols..(r + 1) * out.cols] {
                *v *= s;
            }
        }
        let ng = self.ng(a) || self.ng(g);
        self.push(out, Op::MulCol(a, g), ng)
    }

    /// Scales column `j` of `a (r x c)` by `b[j]` where `b` is `1 x c`.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Var {
        let (ma, mb) = (self.value(a), self.value(b));
        assert_eq!((1, ma.cols), mb.shape(), "mul_row shape mismatch");
        let mut out = ma.clone();
        for r in 0..out.rows {
            for c in 0..out.cols {
                out.data[r * out.cols + c] *= mb.data[c];
            }
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MulRow(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x + s);
        let ng = self.ng(a);
        self.push(out, Op::AddScalar(a), ng)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        let ng = self.ng(a);
        self.push(out, Op::Gelu(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let ng = self.ng(a);
        self.push(out, Op::Tanh(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let ng = self.ng(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        let cols = out.cols;
        for row in out.data.chunks_mut(cols) {
            softmax_in_place(row);
        }
        let ng = self.ng(a);
        self.push(out, Op::SoftmaxRows(a), ng)
    }

    /// Per-row standardisation without affine parameters.
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let ma = self.value(a);
        let mut out = ma.clone();
        let mut inv_std = Vec::with_capacity(ma.rows);
        let n = ma.cols as f64;
        for row in out.data.chunks_mut(ma.cols) {
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * is;
            }
            inv_std.push(is);
        }
        let ng = self.ng(a);
        self.push(out, Op::LayerNormRows(a, inv_std), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let ng = self.ng(a);
        self.push(out, Op::Transpose(a), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Mat::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.rows, rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.data[r * cols + off..r * cols + off + m.cols].copy_from_slice(m.row(r));
            }
            off += m.cols;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.cols, cols, "concat_rows col mismatch");
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Mat::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let ma = self.value(a);
        assert!(start + len <= ma.cols, "slice_cols out of range");
        let mut out = Mat::zeros(ma.rows, len);
        for r in 0..ma.rows {
            out.data[r * len..(r + 1) * len].copy_from_slice(&ma.row(r)[start..start + len]);
        }
        let ng = self.ng(a);
        self.push(out, Op::SliceCols(a, start), ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let ma = self.value(a);
        assert!(start + len <= ma.rows, "slice_rows out of range");
        let out = Mat::from_vec(len, ma.cols, ma.data[start * ma.cols..(start + len) * ma.cols].to_vec());
        let ng = self.ng(a);
        self.push(out, Op::SliceRows(a, start), ng)
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let ma = self.value(a);
        let mut out = Mat::zeros(1, ma.cols);
        for r in 0..ma.rows {
            for c in 0..ma.cols {
                out.data[c] += ma.get(r, c);
            }
        }
        let n = ma.rows as f64;
        for v in &mut out.data {
            *v /= n;
        }
        let ng = self.ng(a);
        self.push(out, Op::MeanRows(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        let ng = self.ng(a);
        self.push(Mat::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().map(|v| v * v).sum();
        let ng = self.ng(a);
        self.push(Mat::scalar(s), Op::SumSquares(a), ng)
    }

    /// Sum of several `1 x 1` nodes, folded left to right.
    pub fn add_all(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "add_all of nothing");
        let mut acc = parts[0];
        for &p in &parts[1..] {
            acc = self.add(acc, p);
        }
        acc
    }

    /// Unit-normalises every row. Fails on an all-zero row.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var> {
        let ma = self.value(a);
        let mut out = ma.clone();
        let mut norms = Vec::with_capacity(ma.rows);
        for row in out.data.chunks_mut(ma.cols) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 || !n.is_finite() {
                return Err(Error::DegenerateVector(format!("row norm is {n}")));
            }
            for v in row.iter_mut() {
                *v /= n;
            }
            norms.push(n);
        }
        let ng = self.ng(a);
        Ok(self.push(out, Op::L2NormalizeRows(a, norms), ng))
    }

    /// Mean element-wise Huber penalty of `a`.
    pub fn huber_mean(&mut self, a: Var, delta: f64) -> Var {
        let ma = self.value(a);
        let s = ma.data.iter().map(|&e| huber(e, delta)).sum::<f64>() / ma.len() as f64;
        let ng = self.ng(a);
        self.push(Mat::scalar(s), Op::HuberMean(a, delta), ng)
    }

    /// Softmax cross-entropy of a `1 x C` logit row against `target`.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Var {
        let ml = self.value(logits);
        assert_eq!(ml.rows, 1, "cross_entropy expects a single row");
        assert!(target < ml.cols, "target class out of range");
        let max = ml.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + ml.data.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = lse - ml.data[target];
        let ng = self.ng(logits);
        self.push(Mat::scalar(loss), Op::CrossEntropy(logits, target), ng)
    }

    /// Discrete-time hazard NLL of a `1 x B` logit row.
    pub fn survival_nll(&mut self, logits: Var, bin: usize, event: bool) -> Var {
        let ml = self.value(logits);
        assert_eq!(ml.rows, 1, "survival_nll expects a single row");
        assert!(bin < ml.cols, "bin out of range");
        let (loss, _, clamped) = survival_nll_with_grad(&ml.data, bin, event);
        if clamped {
            self.clamp_events += 1;
        }
        let ng = self.ng(logits);
        self.push(Mat::scalar(loss), Op::SurvivalNll(logits, bin, event), ng)
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        if !self.ng(loss) {
            return Gradients { grads, bound: self.bound.clone() };
        }
        grads[loss.0] = Some(Mat::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        // Constants keep `None`: they are outside the differentiated graph.
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.needs_grad {
                grads[i] = None;
            }
        }
        Gradients { grads, bound: self.bound.clone() }
    }

    fn accumulate(&self, grads: &mut [Option<Mat>], v: Var, g: Mat) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Mat, grads: &mut [Option<Mat>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    let ga = g.matmul(&self.value(*b).transpose());
                    self.accumulate(grads, *a, ga);
                }
                if self.ng(*b) {
                    let gb = self.value(*a).transpose().matmul(g);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::AddRow(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.ng(*b) {
                    let mut gb = Mat::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for c in 0..g.cols {
                            gb.data[c] += g.get(r, c);
                        }
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y);
                    self.accumulate(grads, *a, ga);
                }
                if self.ng(*b) {
                    let gb = g.zip_map(self.value(*a), |x, y| x * y);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::MulCol(a, s) => {
                let (ma, ms) = (self.value(*a), self.value(*s));
                if self.ng(*a) {
                    let mut ga = g.clone();
                    for r in 0..ga.rows {
                        for v in &mut ga.data[r * ga.cols..(r + 1) * ga.cols] {
                            *v *= ms.data[r];
                        }
                    }
                    self.accumulate(grads, *a, ga);
                }
                if self.ng(*s) {
                    let mut gs = Mat::zeros(ma.rows, 1);
                    for r in 0..ma.rows {
                        gs.data[r] = g.row(r).iter().zip(ma.row(r)).map(|(x, y)| x * y).sum();
                    }
                    self.accumulate(grads, *s, gs);
                }
            }
            Op::MulRow(a, b) => {
                let (ma, mb) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    let mut ga = g.clone();
                    for r in 0..ga.rows {
                        for c in 0..ga.cols {
                            ga.data[r * ga.cols + c] *= mb.data[c];
                        }
                    }
                    self.accumulate(grads, *a, ga);
                }
                if self.ng(*b) {
                    let mut gb = Mat::zeros(1, ma.cols);
                    for r in 0..ma.rows {
                        for c in 0..ma.cols {
                            gb.data[c] += g.get(r, c) * ma.get(r, c);
                        }
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.accumulate(grads, *a, g.map(|v| v * s));
            }
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Gelu(a) => {
                let ga = g.zip_map(self.value(*a), |gv, x| gv * gelu_grad(x));
                self.accumulate(grads, *a, ga);
            }
            Op::Tanh(a) => {
                let ga = g.zip_map(&node.value, |gv, y| gv * (1.0 - y * y));
                self.accumulate(grads, *a, ga);
            }
            Op::Sigmoid(a) => {
                let ga = g.zip_map(&node.value, |gv, y| gv * y * (1.0 - y));
                self.accumulate(grads, *a, ga);
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut ga = Mat::zeros(y.rows, y.cols);
                for r in 0..y.rows {
                    let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                    for c in 0..y.cols {
                        ga.data[r * y.cols + c] = y.get(r, c) * (g.get(r, c) - dot);
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::LayerNormRows(a, inv_std) => {
                let y = &node.value;
                let n = y.cols as f64;
                let mut ga = Mat::zeros(y.rows, y.cols);
                for r in 0..y.rows {
                    let gr = g.row(r);
                    let yr = y.row(r);
                    let mean_g = gr.iter().sum::<f64>() / n;
                    let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
                    for c in 0..y.cols {
                        ga.data[r * y.cols + c] = inv_std[r] * (gr[c] - mean_g - yr[c] * mean_gy);
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()),
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let cols = self.value(p).cols;
                    if self.ng(p) {
                        let mut gp = Mat::zeros(g.rows, cols);
                        for r in 0..g.rows {
                            gp.data[r * cols..(r + 1) * cols].copy_from_slice(&g.row(r)[off..off + cols]);
                        }
                        self.accumulate(grads, p, gp);
                    }
                    off += cols;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let rows = self.value(p).rows;
                    if self.ng(p) {
                        let gp = Mat::from_vec(rows, g.cols, g.data[off * g.cols..(off + rows) * g.cols].to_vec());
                        self.accumulate(grads, p, gp);
                    }
                    off += rows;
                }
            }
            Op::SliceCols(a, start) => {
                let ma = self.value(*a);
                let mut ga = Mat::zeros(ma.rows, ma.cols);
                for r in 0..g.rows {
                    ga.data[r * ma.cols + start..r * ma.cols + start + g.cols].copy_from_slice(g.row(r));
                }
                self.accumulate(grads, *a, ga);
            }
            Op::SliceRows(a, start) => {
                let ma = self.value(*a);
                let mut ga = Mat::zeros(ma.rows, ma.cols);
                ga.data[start * ma.cols..(start + g.rows) * ma.cols].copy_from_slice(&g.data);
                self.accumulate(grads, *a, ga);
            }
            Op::MeanRows(a) => {
                let ma = self.value(*a);
                let n = ma.rows as f64;
                let mut ga = Mat::zeros(ma.rows, ma.cols);
                for r in 0..ma.rows {
                    for c in 0..ma.cols {
                        ga.data[r * ma.cols + c] = g.data[c] / n;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Sum(a) => {
                let ma = self.value(*a);
                let ga = Mat::from_vec(ma.rows, ma.cols, vec![g.data[0]; ma.len()]);
                self.accumulate(grads, *a, ga);
            }
            Op::SumSquares(a) => {
                let s = 2.0 * g.data[0];
                let ga = self.value(*a).map(|v| s * v);
                self.accumulate(grads, *a, ga);
            }
            Op::L2NormalizeRows(a, norms) => {
                let y = &node.value;
                let mut ga = Mat::zeros(y.rows, y.cols);
                for r in 0..y.rows {
                    let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                    for c in 0..y.cols {
                        ga.data[r * y.cols + c] = (g.get(r, c) - y.get(r, c) * dot) / norms[r];
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::HuberMean(a, delta) => {
                let ma = self.value(*a);
                let s = g.data[0] / ma.len() as f64;
                let ga = ma.map(|e| s * huber_grad(e, *delta));
                self.accumulate(grads, *a, ga);
            }
            Op::CrossEntropy(logits, target) => {
                let mut p = self.value(*logits).clone();
                softmax_in_place(&mut p.data);
                p.data[*target] -= 1.0;
                let s = g.data[0];
                self.accumulate(grads, *logits, p.map(|v| v * s));
            }
            Op::SurvivalNll(logits, bin, event) => {
                let ml = self.value(*logits);
                let (_, gl, _) = survival_nll_with_grad(&ml.data, *bin, *event);
                let s = g.data[0];
                let gl = Mat::from_vec(1, ml.cols, gl.into_iter().map(|v| v * s).collect());
                self.accumulate(grads, *logits, gl);
            }
        }
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Mat>>,
    bound: HashMap<usize, Var>,
}

impl Gradients {
    /// Gradient of a node, or `None` when the node is a constant or does not
    /// influence the loss.
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of the parameter bound under `id`, if it was used.
    pub fn param(&self, id: usize) -> Option<&Mat> {
        self.bound.get(&id).and_then(|v| self.get(*v))
    }
}
