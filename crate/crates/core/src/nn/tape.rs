//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Tape`] records every operation of one loss evaluation. Leaves are either tracked
//! inputs (parameters, or actions we differentiate through) or constants. Calling
//! [`Tape::backward`] walks the record in reverse and returns the gradient of a scalar node
//! with respect to every tracked input.
//!
//! Nodes that do not depend on a tracked input never receive gradients, so frozen networks
//! can be placed on the tape as constants at no backward cost.

use std::collections::HashMap;

use super::mat::{gemm, Mat};
use super::mlp::Activation;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Input,
    Constant,
    Affine(Var, Var, Var),
    Act(Var, Activation),
    Sigmoid(Var),
    Exp(Var),
    Square(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    ScaleBy(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Clamp(Var, f64, f64),
    SumCols(Var),
    Mean(Var),
    ConcatCols(Var, Var),
    SliceCols(Var, usize),
    RepeatRows(Var, usize),
    Reshape(Var),
    LogSumExpRows(Var),
    RowNorm(Var),
    GatherRows(Var, Vec<usize>),
}

struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
    layer: Option<usize>,
}

/// Operation record for one differentiable evaluation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    layer: Option<usize>,
}

/// Gradients of a scalar node with respect to the tracked inputs of a tape.
#[derive(Debug, Default)]
pub struct Gradients {
    by_var: HashMap<Var, Mat>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.by_var.get(&v)
    }

    /// Gradient for `v`, or zeros of the given shape when `v` did not influence the loss.
    pub fn take(&mut self, v: Var, shape: (usize, usize)) -> Mat {
        self.by_var
            .remove(&v)
            .unwrap_or_else(|| Mat::zeros(shape.0, shape.1))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Tags subsequently recorded nodes with a layer index (used in error reports).
    pub fn set_layer(&mut self, layer: Option<usize>) {
        self.layer = layer;
    }

    /// A leaf whose gradient is wanted.
    pub fn input(&mut self, value: Mat) -> Var {
        self.push_raw(value, Op::Input, true)
    }

    /// A leaf that blocks gradients.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push_raw(value, Op::Constant, false)
    }

    /// Copy of `v` that gradients do not flow through.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "scalar() on a non-scalar node");
        m.data()[0]
    }

    /// Layer tag of the earliest node holding a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<(usize, Option<usize>)> {
        self.nodes
            .iter()
            .enumerate()
            .find(|(_, n)| !n.value.is_finite())
            .map(|(i, n)| (i, n.layer))
    }

    fn push_raw(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            layer: self.layer,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Mat, op: Op, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.push_raw(value, op, needs_grad)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    // ---- operations ----

    /// `x · wᵀ + b` with `x: [n×in]`, `w: [out×in]`, `b: [1×out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        assert_eq!(xv.cols(), wv.cols(), "affine input width mismatch");
        assert_eq!(bv.shape(), (1, wv.rows()), "affine bias shape mismatch");
        let mut out = Mat::zeros(xv.rows(), wv.rows());
        for i in 0..out.rows() {
            out.row_mut(i).copy_from_slice(bv.data());
        }
        gemm(1.0, xv, false, wv, true, 1.0, &mut out);
        self.push(out, Op::Affine(x, w, b), &[x, w, b])
    }

    pub fn activation(&mut self, x: Var, act: Activation) -> Var {
        if act == Activation::Identity {
            return x;
        }
        let out = self.value(x).map(|v| act.apply(v));
        self.push(out, Op::Act(x, act), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::exp);
        self.push(out, Op::Exp(x), &[x])
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * v);
        self.push(out, Op::Square(x), &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    /// Adds a `1×n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        assert_eq!(rv.shape(), (1, av.cols()), "add_row shape mismatch");
        let mut out = av.clone();
        for i in 0..out.rows() {
            for (o, r) in out.row_mut(i).iter_mut().zip(rv.data()) {
                *o += r;
            }
        }
        self.push(out, Op::AddRow(a, row), &[a, row])
    }

    /// Scales row `i` of `a` by entry `i` of the column `col`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (av, cv) = (self.value(a), self.value(col));
        assert_eq!(cv.shape(), (av.rows(), 1), "mul_col shape mismatch");
        let mut out = av.clone();
        for i in 0..out.rows() {
            let c = cv.data()[i];
            for o in out.row_mut(i) {
                *o *= c;
            }
        }
        self.push(out, Op::MulCol(a, col), &[a, col])
    }

    /// Multiplies every entry of `a` by the `1×1` node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        let k = self.scalar(s);
        let out = self.value(a).map(|x| x * k);
        self.push(out, Op::ScaleBy(a, s), &[a, s])
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| x * k);
        self.push(out, Op::Scale(a, k), &[a])
    }

    pub fn offset(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| x + k);
        self.push(out, Op::Offset(a), &[a])
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(out, Op::Clamp(a, lo, hi), &[a])
    }

    /// Row sums: `[n×m] -> [n×1]`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let sums: Vec<f64> = (0..av.rows()).map(|i| av.row(i).iter().sum()).collect();
        self.push(Mat::col_vector(&sums), Op::SumCols(a), &[a])
    }

    /// Mean of all entries as a `1×1` node.
    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a).mean();
        self.push(Mat::scalar(m), Op::Mean(a), &[a])
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.rows(), bv.rows(), "concat_cols row mismatch");
        let cols = av.cols() + bv.cols();
        let mut out = Mat::zeros(av.rows(), cols);
        for i in 0..av.rows() {
            let row = out.row_mut(i);
            row[..av.cols()].copy_from_slice(av.row(i));
            row[av.cols()..].copy_from_slice(bv.row(i));
        }
        self.push(out, Op::ConcatCols(a, b), &[a, b])
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        assert!(start + len <= av.cols(), "slice_cols out of range");
        let mut out = Mat::zeros(av.rows(), len);
        for i in 0..av.rows() {
            out.row_mut(i).copy_from_slice(&av.row(i)[start..start + len]);
        }
        self.push(out, Op::SliceCols(a, start), &[a])
    }

    /// Row `i` becomes rows `i*times .. (i+1)*times`.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Var {
        let av = self.value(a);
        let mut out = Mat::zeros(av.rows() * times, av.cols());
        for i in 0..av.rows() {
            for t in 0..times {
                out.row_mut(i * times + t).copy_from_slice(av.row(i));
            }
        }
        self.push(out, Op::RepeatRows(a, times), &[a])
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let out = self.value(a).clone().reshaped(rows, cols);
        self.push(out, Op::Reshape(a), &[a])
    }

    /// Row-wise `log Σ_j exp(a_ij)`: `[n×m] -> [n×1]`.
    pub fn log_sum_exp_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let out: Vec<f64> = (0..av.rows()).map(|i| log_sum_exp(av.row(i))).collect();
        self.push(Mat::col_vector(&out), Op::LogSumExpRows(a), &[a])
    }

    /// Row-wise Euclidean norm: `[n×m] -> [n×1]`.
    pub fn row_norm(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let out: Vec<f64> = (0..av.rows())
            .map(|i| av.row(i).iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        self.push(Mat::col_vector(&out), Op::RowNorm(a), &[a])
    }

    /// Selects rows of `table` by index.
    pub fn gather_rows(&mut self, table: Var, idx: Vec<usize>) -> Var {
        let tv = self.value(table);
        let mut out = Mat::zeros(idx.len(), tv.cols());
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(tv.row(i));
        }
        self.push(out, Op::GatherRows(table, idx), &[table])
    }

    // ---- backward ----

    /// Gradient of the scalar node `loss` with respect to every tracked input.
    pub fn backward(&self, loss: Var) -> Gradients {
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Mat>> = (0..n).map(|_| None).collect();
        let lv = &self.nodes[loss.0].value;
        grads[loss.0] = Some(Mat::filled(lv.rows(), lv.cols(), 1.0));
        let mut out = Gradients::default();

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Input => {
                    out.by_var.insert(Var(i), g);
                }
                Op::Constant => {}
                Op::Affine(x, w, b) => {
                    if self.needs(*x) {
                        let wv = self.value(*w);
                        let mut dx = Mat::zeros(g.rows(), wv.cols());
                        gemm(1.0, &g, false, wv, false, 0.0, &mut dx);
                        accumulate(&mut grads, *x, dx);
                    }
                    if self.needs(*w) {
                        let xv = self.value(*x);
                        let mut dw = Mat::zeros(g.cols(), xv.cols());
                        gemm(1.0, &g, true, xv, false, 0.0, &mut dw);
                        accumulate(&mut grads, *w, dw);
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, col_sums(&g));
                    }
                }
                Op::Act(x, act) => {
                    let y = &node.value;
                    let dx = match act {
                        Activation::Relu => g.zip_map(y, |g, y| if y > 0.0 { g } else { 0.0 }),
                        Activation::Tanh => g.zip_map(y, |g, y| g * (1.0 - y * y)),
                        Activation::Identity => g,
                    };
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sigmoid(x) => {
                    let dx = g.zip_map(&node.value, |g, y| g * y * (1.0 - y));
                    accumulate(&mut grads, *x, dx);
                }
                Op::Exp(x) => {
                    let dx = g.zip_map(&node.value, |g, y| g * y);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Square(x) => {
                    let dx = g.zip_map(self.value(*x), |g, x| 2.0 * g * x);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.map(|x| -x));
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.zip_map(self.value(*b), |g, y| g * y));
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.zip_map(self.value(*a), |g, x| g * x));
                    }
                }
                Op::AddRow(a, row) => {
                    if self.needs(*row) {
                        accumulate(&mut grads, *row, col_sums(&g));
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::MulCol(a, col) => {
                    let (av, cv) = (self.value(*a), self.value(*col));
                    if self.needs(*col) {
                        let dc: Vec<f64> = (0..g.rows())
                            .map(|i| g.row(i).iter().zip(av.row(i)).map(|(g, x)| g * x).sum())
                            .collect();
                        accumulate(&mut grads, *col, Mat::col_vector(&dc));
                    }
                    if self.needs(*a) {
                        let mut da = g;
                        for i in 0..da.rows() {
                            let c = cv.data()[i];
                            for d in da.row_mut(i) {
                                *d *= c;
                            }
                        }
                        accumulate(&mut grads, *a, da);
                    }
                }
                Op::ScaleBy(a, s) => {
                    let k = self.scalar(*s);
                    if self.needs(*s) {
                        let ds = g
                            .data()
                            .iter()
                            .zip(self.value(*a).data())
                            .map(|(g, x)| g * x)
                            .sum();
                        accumulate(&mut grads, *s, Mat::scalar(ds));
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.map(|x| x * k));
                    }
                }
                Op::Scale(a, k) => {
                    let k = *k;
                    accumulate(&mut grads, *a, g.map(|x| x * k));
                }
                Op::Offset(a) => accumulate(&mut grads, *a, g),
                Op::Clamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    let dx = g.zip_map(self.value(*a), |g, x| {
                        if (lo..=hi).contains(&x) {
                            g
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut grads, *a, dx);
                }
                Op::SumCols(a) => {
                    let av = self.value(*a);
                    let mut dx = Mat::zeros(av.rows(), av.cols());
                    for r in 0..av.rows() {
                        let gr = g.data()[r];
                        dx.row_mut(r).fill(gr);
                    }
                    accumulate(&mut grads, *a, dx);
                }
                Op::Mean(a) => {
                    let av = self.value(*a);
                    let k = g.data()[0] / av.len() as f64;
                    accumulate(&mut grads, *a, Mat::filled(av.rows(), av.cols(), k));
                }
                Op::ConcatCols(a, b) => {
                    let ac = self.value(*a).cols();
                    let bc = self.value(*b).cols();
                    if self.needs(*a) {
                        let mut da = Mat::zeros(g.rows(), ac);
                        for r in 0..g.rows() {
                            da.row_mut(r).copy_from_slice(&g.row(r)[..ac]);
                        }
                        accumulate(&mut grads, *a, da);
                    }
                    if self.needs(*b) {
                        let mut db = Mat::zeros(g.rows(), bc);
                        for r in 0..g.rows() {
                            db.row_mut(r).copy_from_slice(&g.row(r)[ac..]);
                        }
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::SliceCols(a, start) => {
                    let av = self.value(*a);
                    let mut da = Mat::zeros(av.rows(), av.cols());
                    for r in 0..g.rows() {
                        da.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::RepeatRows(a, times) => {
                    let av = self.value(*a);
                    let mut da = Mat::zeros(av.rows(), av.cols());
                    for r in 0..av.rows() {
                        let dst = da.row_mut(r);
                        for t in 0..*times {
                            for (d, x) in dst.iter_mut().zip(g.row(r * times + t)) {
                                *d += x;
                            }
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::Reshape(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut grads, *a, g.reshaped(r, c));
                }
                Op::LogSumExpRows(a) => {
                    let av = self.value(*a);
                    let y = &node.value;
                    let mut da = Mat::zeros(av.rows(), av.cols());
                    for r in 0..av.rows() {
                        let (gr, yr) = (g.data()[r], y.data()[r]);
                        for (d, x) in da.row_mut(r).iter_mut().zip(av.row(r)) {
                            *d = gr * (x - yr).exp();
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::RowNorm(a) => {
                    let av = self.value(*a);
                    let y = &node.value;
                    let mut da = Mat::zeros(av.rows(), av.cols());
                    for r in 0..av.rows() {
                        let norm = y.data()[r];
                        if norm > 0.0 {
                            let k = g.data()[r] / norm;
                            for (d, x) in da.row_mut(r).iter_mut().zip(av.row(r)) {
                                *d = k * x;
                            }
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::GatherRows(table, idx) => {
                    let tv = self.value(*table);
                    let mut dt = Mat::zeros(tv.rows(), tv.cols());
                    for (r, &i) in idx.iter().enumerate() {
                        for (d, x) in dt.row_mut(i).iter_mut().zip(g.row(r)) {
                            *d += x;
                        }
                    }
                    accumulate(&mut grads, *table, dt);
                }
            }
        }
        out
    }

    /// Errors with the offending layer when `loss` is not finite.
    pub fn check_finite(&self, loss: Var, what: &str) -> Result<()> {
        if self.value(loss).is_finite() {
            return Ok(());
        }
        let layer = self.first_non_finite().and_then(|(_, l)| l);
        Err(Error::non_finite(what, layer))
    }
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn col_sums(g: &Mat) -> Mat {
    let mut out = Mat::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, x) in out.data_mut().iter_mut().zip(g.row(r)) {
            *o += x;
        }
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `log Σ exp(x_i)`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
