//! Reverse-mode differentiation over dense and sparse matrix operations.
//!
//! A [`Tape`] records every operation of one forward pass. Values are
//! computed eagerly while recording; [`Tape::backward`] walks the record in
//! reverse and returns gradients for every registered parameter.

mod check;
mod loss;
mod optim;
mod params;

use std::sync::Arc;

pub use check::{finite_difference_check, FdReport, ParamFdResult};
pub use loss::{losses, LossTarget};
pub use optim::{optimizer_step, Optimizer, OptimizerState};
pub use params::{Gradients, ParamId, ParamStore};

use serde::{Deserialize, Serialize};

use crate::dense::Mat;
use crate::error::{shape_err, GsanError, Result};
use crate::sparse::SparseOperator;

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "slope")]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
    Abs,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(s) => {
                if x > 0.0 {
                    x
                } else {
                    s * x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Abs => x.abs(),
        }
    }

    /// Derivative given the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(s) => {
                if x > 0.0 {
                    1.0
                } else {
                    s
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// True when `f(-x) = -f(x)`.
    pub fn is_odd(self) -> bool {
        matches!(self, Activation::Identity | Activation::Tanh)
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

/// Row-compressed sparsity pattern, the index structure for attention
/// coefficients. Entry `e` of row `i` refers to column `cols[e]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pattern {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    entry_row: Vec<usize>,
}

impl Pattern {
    /// One sorted column list per row.
    pub fn from_lists(n_cols: usize, lists: &[Vec<usize>]) -> Result<Self> {
        let mut row_ptr = Vec::with_capacity(lists.len() + 1);
        row_ptr.push(0);
        let mut cols = Vec::new();
        let mut entry_row = Vec::new();
        for (i, l) in lists.iter().enumerate() {
            if l.windows(2).any(|w| w[0] >= w[1]) || l.iter().any(|&j| j >= n_cols) {
                return shape_err(format!("row {i} of pattern is unsorted or out of bounds"));
            }
            cols.extend_from_slice(l);
            entry_row.extend(std::iter::repeat_n(i, l.len()));
            row_ptr.push(cols.len());
        }
        Ok(Pattern {
            n_rows: lists.len(),
            n_cols,
            row_ptr,
            cols,
            entry_row,
        })
    }

    /// Support of `op`, optionally with the diagonal added.
    pub fn from_support(op: &SparseOperator, with_diagonal: bool) -> Self {
        let lists: Vec<Vec<usize>> = (0..op.rows())
            .map(|i| {
                let mut l: Vec<usize> = op.row(i).0.to_vec();
                if with_diagonal && i < op.cols() {
                    if let Err(p) = l.binary_search(&i) {
                        l.insert(p, i);
                    }
                }
                l
            })
            .collect();
        Pattern::from_lists(op.cols(), &lists).expect("operator rows are sorted")
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.row_ptr[i]..self.row_ptr[i + 1]
    }

    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    pub fn entry_rows(&self) -> &[usize] {
        &self.entry_row
    }

    /// Position of `(i, j)` among the entries, if present.
    pub fn find(&self, i: usize, j: usize) -> Option<usize> {
        self.row(i).binary_search(&j).ok().map(|p| self.row_ptr[i] + p)
    }

    /// Sparse matrix with `values[e]` at entry `e`.
    pub fn to_operator(&self, values: &[f64]) -> SparseOperator {
        let t = (0..self.nnz()).map(|e| (self.entry_row[e], self.cols[e], values[e]));
        SparseOperator::from_triplets(self.n_rows, self.n_cols, t).expect("pattern in bounds")
    }

    /// Relabels rows/columns of a square pattern: `(i, j)` moves to
    /// `(perm[i], perm[j])`. Returns the new pattern and, for each new entry,
    /// the index of the old entry it came from.
    pub fn permuted(&self, perm: &[usize]) -> (Pattern, Vec<usize>) {
        let mut lists: Vec<Vec<(usize, usize)>> = vec![Vec::new(); self.n_rows];
        for e in 0..self.nnz() {
            lists[perm[self.entry_row[e]]].push((perm[self.cols[e]], e));
        }
        let mut origin = Vec::with_capacity(self.nnz());
        let mut cols_lists = Vec::with_capacity(self.n_rows);
        for mut l in lists {
            l.sort_unstable();
            origin.extend(l.iter().map(|&(_, e)| e));
            cols_lists.push(l.into_iter().map(|(j, _)| j).collect());
        }
        (Pattern::from_lists(self.n_cols, &cols_lists).expect("permutation"), origin)
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Sparse {
        op: Arc<SparseOperator>,
        transpose: bool,
        x: Var,
    },
    Repeat {
        op: Arc<SparseOperator>,
        times: usize,
        x: Var,
    },
    Valued {
        pattern: Arc<Pattern>,
        values: Var,
        x: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Arc<Mat>),
    Mul(Var, Var),
    AddRow(Var, Var),
    Act(Var, Activation),
    PairScores {
        pattern: Arc<Pattern>,
        left: Var,
        right: Var,
    },
    SegmentSoftmax {
        pattern: Arc<Pattern>,
        logits: Var,
    },
    HCat(Vec<Var>),
    ColSlice(Var, usize, usize),
    GatherRows(Var, Arc<Vec<usize>>),
    MeanRows(Var),
    Sum(Var),
    Loss(Var, Arc<LossTarget>),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Param(_) => Vec::new(),
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::PairScores { left: a, right: b, .. }
            | Op::Valued { values: a, x: b, .. } => vec![*a, *b],
            Op::Sparse { x, .. } | Op::Repeat { x, .. } => vec![*x],
            Op::Scale(a, _)
            | Op::MulConst(a, _)
            | Op::Act(a, _)
            | Op::SegmentSoftmax { logits: a, .. }
            | Op::ColSlice(a, _, _)
            | Op::GatherRows(a, _)
            | Op::MeanRows(a)
            | Op::Sum(a)
            | Op::Loss(a, _) => vec![*a],
            Op::HCat(vars) => vars.clone(),
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Mat,
    /// Depends on a parameter.
    grad: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let value = self.eval(&op)?;
        let grad = match &op {
            Op::Param(_) => true,
            op => op.inputs().iter().any(|v| self.nodes[v.0].grad),
        };
        self.nodes.push(Node { op, value, grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant input.
    pub fn constant(&mut self, m: Mat) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value: m,
            grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Registers a parameter; its gradient is reported under `id`.
    pub fn param(&mut self, id: ParamId, store: &ParamStore) -> Var {
        self.nodes.push(Node {
            op: Op::Param(id),
            value: store.get(id).clone(),
            grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::MatMul(a, b))
    }

    /// `op · x`.
    pub fn sparse(&mut self, op: &Arc<SparseOperator>, x: Var) -> Result<Var> {
        self.push(Op::Sparse {
            op: op.clone(),
            transpose: false,
            x,
        })
    }

    /// `opᵀ · x`.
    pub fn sparse_t(&mut self, op: &Arc<SparseOperator>, x: Var) -> Result<Var> {
        self.push(Op::Sparse {
            op: op.clone(),
            transpose: true,
            x,
        })
    }

    /// `op^times · x` by repeated application.
    pub fn repeat(&mut self, op: &Arc<SparseOperator>, times: usize, x: Var) -> Result<Var> {
        self.push(Op::Repeat {
            op: op.clone(),
            times,
            x,
        })
    }

    /// `A · x` where `A` has `values` (an `nnz x 1` column) on `pattern`.
    pub fn valued(&mut self, pattern: &Arc<Pattern>, values: Var, x: Var) -> Result<Var> {
        self.push(Op::Valued {
            pattern: pattern.clone(),
            values,
            x,
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Sub(a, b))
    }

    /// Sum of several nodes, left to right.
    pub fn sum_all(&mut self, vars: &[Var]) -> Result<Var> {
        let (first, rest) = vars.split_first().ok_or_else(|| GsanError::ShapeError("empty sum".into()))?;
        let mut acc = *first;
        for &v in rest {
            acc = self.add(acc, v)?;
        }
        Ok(acc)
    }

    pub fn scale(&mut self, a: Var, alpha: f64) -> Result<Var> {
        self.push(Op::Scale(a, alpha))
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, a: Var, c: Arc<Mat>) -> Result<Var> {
        self.push(Op::MulConst(a, c))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul(a, b))
    }

    /// Adds the `1 x F` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::AddRow(a, b))
    }

    pub fn act(&mut self, a: Var, f: Activation) -> Result<Var> {
        if f == Activation::Identity {
            return Ok(a);
        }
        self.push(Op::Act(a, f))
    }

    /// `e_ij = left_i + right_j` for every pattern entry `(i, j)`, as an `nnz x 1` column.
    pub fn pair_scores(&mut self, pattern: &Arc<Pattern>, left: Var, right: Var) -> Result<Var> {
        self.push(Op::PairScores {
            pattern: pattern.clone(),
            left,
            right,
        })
    }

    /// Softmax of an `nnz x 1` column within each pattern row.
    pub fn segment_softmax(&mut self, pattern: &Arc<Pattern>, logits: Var) -> Result<Var> {
        self.push(Op::SegmentSoftmax {
            pattern: pattern.clone(),
            logits,
        })
    }

    pub fn hcat(&mut self, vars: &[Var]) -> Result<Var> {
        if vars.len() == 1 {
            return Ok(vars[0]);
        }
        self.push(Op::HCat(vars.to_vec()))
    }

    pub fn col_slice(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        self.push(Op::ColSlice(a, start, end))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Arc<Vec<usize>>) -> Result<Var> {
        self.push(Op::GatherRows(a, idx))
    }

    /// `1 x F` mean over rows (zeros for an empty input).
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        self.push(Op::MeanRows(a))
    }

    /// `1 x 1` sum of all entries.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sum(a))
    }

    /// Scalar loss of `pred` against `target`.
    pub fn loss(&mut self, pred: Var, target: Arc<LossTarget>) -> Result<Var> {
        self.push(Op::Loss(pred, target))
    }

    fn v(&self, x: Var) -> &Mat {
        &self.nodes[x.0].value
    }

    fn eval(&self, op: &Op) -> Result<Mat> {
        self.eval_with(op, &|x: Var| self.v(x))
    }

    fn eval_with<'a>(&self, op: &Op, val: &dyn Fn(Var) -> &'a Mat) -> Result<Mat>
    where
        Self: 'a,
    {
        Ok(match op {
            Op::Leaf | Op::Param(_) => unreachable!("leaves are not evaluated"),
            Op::MatMul(a, b) => val(*a).matmul(val(*b))?,
            Op::Sparse { op, transpose, x } => {
                if *transpose {
                    op.apply_transpose(val(*x))?
                } else {
                    op.apply(val(*x))?
                }
            }
            Op::Repeat { op, times, x } => {
                let mut y = val(*x).clone();
                for _ in 0..*times {
                    y = op.apply(&y)?;
                }
                y
            }
            Op::Valued { pattern, values, x } => valued_forward(pattern, val(*values), val(*x))?,
            Op::Add(a, b) => val(*a).add(val(*b))?,
            Op::Sub(a, b) => val(*a).sub(val(*b))?,
            Op::Scale(a, s) => val(*a).scale(*s),
            Op::MulConst(a, c) => {
                let a = val(*a);
                if a.shape() != c.shape() {
                    return shape_err("mul_const shape mismatch");
                }
                Mat::from_vec(
                    a.rows(),
                    a.cols(),
                    a.as_slice().iter().zip(c.as_slice()).map(|(x, y)| x * y).collect(),
                )?
            }
            Op::Mul(a, b) => {
                let (a, b) = (val(*a), val(*b));
                if a.shape() != b.shape() {
                    return shape_err("mul shape mismatch");
                }
                Mat::from_vec(
                    a.rows(),
                    a.cols(),
                    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).collect(),
                )?
            }
            Op::AddRow(a, b) => {
                let (a, b) = (val(*a), val(*b));
                if b.rows() != 1 || b.cols() != a.cols() {
                    return shape_err("add_row expects a 1 x F row");
                }
                let mut out = a.clone();
                for i in 0..out.rows() {
                    for (o, &x) in out.row_mut(i).iter_mut().zip(b.row(0)) {
                        *o += x;
                    }
                }
                out
            }
            Op::Act(a, f) => val(*a).map(|x| f.apply(x)),
            Op::PairScores { pattern, left, right } => {
                let (l, r) = (val(*left), val(*right));
                if l.shape() != (pattern.n_rows(), 1) || r.shape() != (pattern.n_cols(), 1) {
                    return shape_err("pair_scores expects column vectors matching the pattern");
                }
                let data = (0..pattern.nnz())
                    .map(|e| l.as_slice()[pattern.entry_rows()[e]] + r.as_slice()[pattern.cols()[e]])
                    .collect();
                Mat::from_vec(pattern.nnz(), 1, data)?
            }
            Op::SegmentSoftmax { pattern, logits } => {
                let z = val(*logits);
                if z.shape() != (pattern.nnz(), 1) {
                    return shape_err("segment_softmax expects an nnz x 1 column");
                }
                let mut out = vec![0.0; pattern.nnz()];
                for i in 0..pattern.n_rows() {
                    let r = pattern.row_range(i);
                    let seg = &z.as_slice()[r.clone()];
                    if let Some(p) = seg.iter().position(|x| !x.is_finite()) {
                        return Err(GsanError::NonFiniteLogit {
                            row: i,
                            col: pattern.cols()[r.start + p],
                        });
                    }
                    let m = seg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for (o, &x) in out[r.clone()].iter_mut().zip(seg) {
                        *o = (x - m).exp();
                        total += *o;
                    }
                    out[r].iter_mut().for_each(|o| *o /= total);
                }
                Mat::from_vec(pattern.nnz(), 1, out)?
            }
            Op::HCat(vars) => {
                let mats: Vec<&Mat> = vars.iter().map(|v| val(*v)).collect();
                Mat::hcat(&mats)?
            }
            Op::ColSlice(a, s, e) => {
                let a = val(*a);
                if *e > a.cols() || s > e {
                    return shape_err("column slice out of range");
                }
                a.col_block(*s, *e)
            }
            Op::GatherRows(a, idx) => {
                let a = val(*a);
                if idx.iter().any(|&i| i >= a.rows()) {
                    return shape_err("gather index out of range");
                }
                a.gather_rows(idx)
            }
            Op::MeanRows(a) => val(*a).mean_rows(),
            Op::Sum(a) => Mat::filled(1, 1, val(*a).sum()),
            Op::Loss(p, t) => Mat::filled(1, 1, losses(val(*p), t)?),
        })
    }

    /// Recomputes every non-leaf node and checks the values are bit-identical
    /// to the recorded ones.
    pub fn replay(&self) -> Result<bool> {
        let mut values: Vec<Mat> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Leaf | Op::Param(_) => node.value.clone(),
                ref op => {
                    let vals = &values;
                    self.eval_with(op, &|x: Var| &vals[x.0])?
                }
            };
            values.push(v);
        }
        Ok(values.iter().zip(&self.nodes).all(|(a, n)| {
            a.shape() == n.value.shape()
                && a.as_slice()
                    .iter()
                    .zip(n.value.as_slice())
                    .all(|(x, y)| x.to_bits() == y.to_bits())
        }))
    }

    /// Gradients of the scalar `loss` with respect to every parameter of `store`.
    pub fn backward(&self, loss: Var, store: &ParamStore) -> Result<Gradients> {
        let lv = self.v(loss);
        if lv.shape() != (1, 1) {
            return Err(GsanError::NotScalar {
                rows: lv.rows(),
                cols: lv.cols(),
            });
        }
        let mut grads: Vec<Option<Mat>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Mat::filled(1, 1, 1.0));
        let mut out = Gradients::zeros_like(store);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.grad {
                continue;
            }
            let send = |grads: &mut Vec<Option<Mat>>, to: Var, d: Mat| -> Result<()> {
                if !self.nodes[to.0].grad {
                    return Ok(());
                }
                match &mut grads[to.0] {
                    Some(acc) => acc.add_assign(&d),
                    slot => {
                        *slot = Some(d);
                        Ok(())
                    }
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.accumulate(*id, &g)?,
                Op::MatMul(a, b) => {
                    if self.nodes[a.0].grad {
                        send(&mut grads, *a, g.matmul_t(self.v(*b))?)?;
                    }
                    if self.nodes[b.0].grad {
                        send(&mut grads, *b, self.v(*a).t_matmul(&g)?)?;
                    }
                }
                Op::Repeat { .. } | Op::Sparse { .. } if !self.nodes[node.op.inputs()[0].0].grad => {}
                Op::Sparse { op, transpose, x } => {
                    let dx = if *transpose { op.apply(&g)? } else { op.apply_transpose(&g)? };
                    send(&mut grads, *x, dx)?;
                }
                Op::Repeat { op, times, x } => {
                    let mut dx = g;
                    for _ in 0..*times {
                        dx = op.apply_transpose(&dx)?;
                    }
                    send(&mut grads, *x, dx)?;
                }
                Op::Valued { pattern, values, x } => {
                    let (vals, xv) = (self.v(*values), self.v(*x));
                    let mut dv = vec![0.0; pattern.nnz()];
                    let mut dx = Mat::zeros(xv.rows(), xv.cols());
                    for e in 0..pattern.nnz() {
                        let (i, j) = (pattern.entry_rows()[e], pattern.cols()[e]);
                        let gi = g.row(i);
                        dv[e] = gi.iter().zip(xv.row(j)).map(|(a, b)| a * b).sum();
                        let a = vals.as_slice()[e];
                        for (o, &gg) in dx.row_mut(j).iter_mut().zip(gi) {
                            *o += a * gg;
                        }
                    }
                    send(&mut grads, *values, Mat::from_vec(pattern.nnz(), 1, dv)?)?;
                    send(&mut grads, *x, dx)?;
                }
                Op::Add(a, b) => {
                    send(&mut grads, *a, g.clone())?;
                    send(&mut grads, *b, g)?;
                }
                Op::Sub(a, b) => {
                    send(&mut grads, *a, g.clone())?;
                    send(&mut grads, *b, g.scale(-1.0))?;
                }
                Op::Scale(a, s) => send(&mut grads, *a, g.scale(*s))?,
                Op::MulConst(a, c) => {
                    let d = Mat::from_vec(
                        g.rows(),
                        g.cols(),
                        g.as_slice().iter().zip(c.as_slice()).map(|(x, y)| x * y).collect(),
                    )?;
                    send(&mut grads, *a, d)?;
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.v(*a), self.v(*b));
                    let prod = |m: &Mat| -> Result<Mat> {
                        Mat::from_vec(
                            g.rows(),
                            g.cols(),
                            g.as_slice().iter().zip(m.as_slice()).map(|(x, y)| x * y).collect(),
                        )
                    };
                    let (da, db) = (prod(bv)?, prod(av)?);
                    send(&mut grads, *a, da)?;
                    send(&mut grads, *b, db)?;
                }
                Op::AddRow(a, b) => {
                    let mut db = Mat::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, &x) in db.row_mut(0).iter_mut().zip(g.row(i)) {
                            *o += x;
                        }
                    }
                    send(&mut grads, *a, g)?;
                    send(&mut grads, *b, db)?;
                }
                Op::Act(a, f) => {
                    let (x, y) = (self.v(*a), &node.value);
                    let d = Mat::from_vec(
                        g.rows(),
                        g.cols(),
                        g.as_slice()
                            .iter()
                            .zip(x.as_slice().iter().zip(y.as_slice()))
                            .map(|(gg, (&xx, &yy))| gg * f.derivative(xx, yy))
                            .collect(),
                    )?;
                    send(&mut grads, *a, d)?;
                }
                Op::PairScores { pattern, left, right } => {
                    let mut dl = Mat::zeros(pattern.n_rows(), 1);
                    let mut dr = Mat::zeros(pattern.n_cols(), 1);
                    for e in 0..pattern.nnz() {
                        let ge = g.as_slice()[e];
                        dl.as_mut_slice()[pattern.entry_rows()[e]] += ge;
                        dr.as_mut_slice()[pattern.cols()[e]] += ge;
                    }
                    send(&mut grads, *left, dl)?;
                    send(&mut grads, *right, dr)?;
                }
                Op::SegmentSoftmax { pattern, logits } => {
                    let y = node.value.as_slice();
                    let gs = g.as_slice();
                    let mut d = vec![0.0; pattern.nnz()];
                    for i in 0..pattern.n_rows() {
                        let r = pattern.row_range(i);
                        let dot: f64 = r.clone().map(|e| y[e] * gs[e]).sum();
                        for e in r {
                            d[e] = y[e] * (gs[e] - dot);
                        }
                    }
                    send(&mut grads, *logits, Mat::from_vec(pattern.nnz(), 1, d)?)?;
                }
                Op::HCat(vars) => {
                    let mut start = 0;
                    for v in vars {
                        let w = self.v(*v).cols();
                        send(&mut grads, *v, g.col_block(start, start + w))?;
                        start += w;
                    }
                }
                Op::ColSlice(a, s, e) => {
                    let av = self.v(*a);
                    let mut d = Mat::zeros(av.rows(), av.cols());
                    for i in 0..av.rows() {
                        d.row_mut(i)[*s..*e].copy_from_slice(g.row(i));
                    }
                    send(&mut grads, *a, d)?;
                }
                Op::GatherRows(a, idx) => {
                    let av = self.v(*a);
                    let mut d = Mat::zeros(av.rows(), av.cols());
                    for (r, &i) in idx.iter().enumerate() {
                        for (o, &x) in d.row_mut(i).iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    send(&mut grads, *a, d)?;
                }
                Op::MeanRows(a) => {
                    let av = self.v(*a);
                    let n = av.rows();
                    let d = if n == 0 {
                        Mat::zeros(0, av.cols())
                    } else {
                        Mat::from_fn(n, av.cols(), |_, j| g[(0, j)] / n as f64)
                    };
                    send(&mut grads, *a, d)?;
                }
                Op::Sum(a) => {
                    let av = self.v(*a);
                    send(&mut grads, *a, Mat::filled(av.rows(), av.cols(), g[(0, 0)]))?;
                }
                Op::Loss(p, t) => {
                    let d = loss::loss_gradient(self.v(*p), t)?.scale(g[(0, 0)]);
                    send(&mut grads, *p, d)?;
                }
            }
        }
        Ok(out)
    }
}

fn valued_forward(pattern: &Pattern, values: &Mat, x: &Mat) -> Result<Mat> {
    if values.shape() != (pattern.nnz(), 1) || x.rows() != pattern.n_cols() {
        return shape_err(format!(
            "valued apply: {} values for {} entries, input {}x{} for {} columns",
            values.rows(),
            pattern.nnz(),
            x.rows(),
            x.cols(),
            pattern.n_cols()
        ));
    }
    let mut out = Mat::zeros(pattern.n_rows(), x.cols());
    for e in 0..pattern.nnz() {
        let a = values.as_slice()[e];
        let (i, j) = (pattern.entry_rows()[e], pattern.cols()[e]);
        let xrow = x.row(j);
        for (o, &b) in out.row_mut(i).iter_mut().zip(xrow) {
            *o += a * b;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_squared_norm_gradient() {
        let mut store = ParamStore::new();
        let w = store.push("w", Mat::from_fn(2, 3, |i, j| (i as f64) - 0.5 * j as f64 + 0.25));
        let x = Mat::col_vec(&[1.0, -2.0, 0.5]);
        let mut t = Tape::new();
        let wv = t.param(w, &store);
        let xv = t.constant(x.clone());
        let y = t.matmul(wv, xv).unwrap();
        let sq = t.mul(y, y).unwrap();
        let s = t.sum(sq).unwrap();
        let loss = t.scale(s, 0.5).unwrap();
        let g = t.backward(loss, &store).unwrap();
        let expected = store.get(w).matmul(&x).unwrap().matmul_t(&x).unwrap();
        assert!(g.get(w).max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn unreached_parameter_gets_zero() {
        let mut store = ParamStore::new();
        let a = store.push("a", Mat::filled(2, 2, 1.0));
        let b = store.push("b", Mat::filled(1, 1, 3.0));
        let mut t = Tape::new();
        let av = t.param(a, &store);
        let s = t.sum(av).unwrap();
        let g = t.backward(s, &store).unwrap();
        assert_eq!(g.get(b), &Mat::zeros(1, 1));
        assert_eq!(g.get(a), &Mat::filled(2, 2, 1.0));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let store = ParamStore::new();
        let mut t = Tape::new();
        let c = t.constant(Mat::zeros(2, 1));
        assert_eq!(t.backward(c, &store), Err(GsanError::NotScalar { rows: 2, cols: 1 }));
    }

    #[test]
    fn softmax_rows_sum_to_one_and_replay_is_exact() {
        let p = Arc::new(Pattern::from_lists(3, &[vec![0, 2], vec![1], vec![0, 1, 2]]).unwrap());
        let mut t = Tape::new();
        let l = t.constant(Mat::col_vec(&[0.3, -1.0, 2.0]));
        let r = t.constant(Mat::col_vec(&[1.0, 0.0, 700.0]));
        let e = t.pair_scores(&p, l, r).unwrap();
        let a = t.segment_softmax(&p, e).unwrap();
        let v = t.value(a).as_slice().to_vec();
        assert!((v[0] + v[1] - 1.0).abs() < 1e-12);
        assert_eq!(v[2], 1.0);
        assert!((v[3] + v[4] + v[5] - 1.0).abs() < 1e-12);
        assert!(t.replay().unwrap());
    }

    #[test]
    fn pattern_permutation_tracks_entries() {
        let p = Pattern::from_lists(3, &[vec![0, 1], vec![1, 2], vec![2]]).unwrap();
        let (q, origin) = p.permuted(&[2, 0, 1]);
        for (e, &o) in origin.iter().enumerate() {
            let perm = [2, 0, 1];
            assert_eq!(q.entry_rows()[e], perm[p.entry_rows()[o]]);
            assert_eq!(q.cols()[e], perm[p.cols()[o]]);
        }
    }
}
