//! Eager reverse-mode differentiation over dense matrices.
//!
//! Every operation computes its value immediately and records on the graph
//! what it needs for the backward pass. Nodes are appended in evaluation
//! order, so the node list is already a topological order and `backward`
//! is a single reverse sweep.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use super::matrix::{gemm, Matrix};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Relu,
    Sigmoid,
    /// Natural log; the input must be strictly positive.
    Log,
    Log1p,
    Exp,
    Square,
    /// `max{x, 0}`, subgradient 0 at the kink.
    ClampMinZero,
    Recip,
    Neg,
}

/// How the right operand of a binary op is broadcast against the left.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    Scalar,
    Row,
    Col,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinaryOp {
    Add,
    Sub,
    Mul,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(BinaryOp, Broadcast, Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Unary(UnaryOp, Var),
    Clamp {
        x: Var,
        lo: f64,
        hi: f64,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Matrix,
        inv_std: Vec<f64>,
    },
    Sum(Var),
    SumRows(Var),
    SumCols(Var),
    LogSumExp {
        x: Var,
        weights: Matrix,
    },
    Reshape(Var),
    ConcatCols(Var, Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ChainCumsum {
        x: Var,
        orders: Arc<Vec<Vec<usize>>>,
    },
    ColumnMix {
        x: Var,
        kernels: Arc<Vec<Matrix>>,
    },
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
    grad: Option<Matrix>,
}

/// Epsilon added to the variance in [`Graph::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is accumulated by [`Graph::backward`].
    pub fn parameter(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward root with respect to `v`, if `v` was
    /// reached.
    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Matrix> {
        self.nodes[v.0].grad.take()
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    // ---- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    /// Elementwise product; `b` may be a scalar, a row or a column that is
    /// broadcast over `a`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    fn binary(&mut self, kind: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let bc = broadcast_kind(av.shape(), bv.shape()).ok_or_else(|| {
            Error::shape(
                "binary",
                format!("cannot broadcast {:?} onto {:?}", bv.shape(), av.shape()),
            )
        })?;
        let cols = av.cols();
        let mut out = av.clone();
        for (idx, x) in out.data_mut().iter_mut().enumerate() {
            let y = bv.data()[broadcast_index(bc, idx, cols)];
            *x = match kind {
                BinaryOp::Add => *x + y,
                BinaryOp::Sub => *x - y,
                BinaryOp::Mul => *x * y,
            };
        }
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Binary(kind, bc, a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|x| x * factor);
        let rg = self.needs(a);
        self.push(value, Op::Scale(a, factor), rg)
    }

    pub fn add_scalar(&mut self, a: Var, shift: f64) -> Var {
        let value = self.value(a).map(|x| x + shift);
        let rg = self.needs(a);
        self.push(value, Op::AddScalar(a), rg)
    }

    // ---- elementwise ------------------------------------------------------

    pub fn unary(&mut self, op: UnaryOp, a: Var) -> Result<Var> {
        let x = self.value(a);
        if op == UnaryOp::Log {
            if let Some(bad) = x.data().iter().find(|&&v| !(v > 0.0) || !v.is_finite()) {
                return Err(Error::numeric(
                    "log",
                    format!("argument {bad} is not positive"),
                ));
            }
        }
        if op == UnaryOp::Log1p {
            if let Some(bad) = x.data().iter().find(|&&v| !(v > -1.0)) {
                return Err(Error::numeric(
                    "log1p",
                    format!("argument {bad} is not above -1"),
                ));
            }
        }
        let value = x.map(|v| match op {
            UnaryOp::Relu | UnaryOp::ClampMinZero => v.max(0.0),
            UnaryOp::Sigmoid => sigmoid(v),
            UnaryOp::Log => v.ln(),
            UnaryOp::Log1p => v.ln_1p(),
            UnaryOp::Exp => v.exp(),
            UnaryOp::Square => v * v,
            UnaryOp::Recip => 1.0 / v,
            UnaryOp::Neg => -v,
        });
        let rg = self.needs(a);
        Ok(self.push(value, Op::Unary(op, a), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Relu, a).expect("relu is total")
    }

    pub fn clamp_min_zero(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::ClampMinZero, a)
            .expect("clamp is total")
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Sigmoid, a).expect("sigmoid is total")
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Exp, a).expect("exp is total")
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Square, a).expect("square is total")
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Neg, a).expect("neg is total")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Log, a)
    }

    pub fn log1p(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Log1p, a)
    }

    pub fn recip(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().contains(&0.0) {
            return Err(Error::numeric("recip", "division by zero"));
        }
        self.unary(UnaryOp::Recip, a)
    }

    /// Clamps into `[lo, hi]`; the gradient is 1 strictly inside and 0 on or
    /// beyond either bound.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).map(|v| v.clamp(lo, hi));
        let rg = self.needs(a);
        self.push(value, Op::Clamp { x: a, lo, hi }, rg)
    }

    /// Row-wise layer normalization with affine gain and bias (both 1×cols).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        if cols < 2 {
            return Err(Error::shape("layer_norm", "needs at least two features"));
        }
        if self.value(gain).shape() != (1, cols) || self.value(bias).shape() != (1, cols) {
            return Err(Error::shape(
                "layer_norm",
                "gain and bias must be 1 x features",
            ));
        }
        let mut normed = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (o, v) in normed.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut out = normed.clone();
        for r in 0..rows {
            for (c, o) in out.row_mut(r).iter_mut().enumerate() {
                *o = *o * g[c] + b[c];
            }
        }
        let rg = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            },
            rg,
        ))
    }

    // ---- reductions -------------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        let rg = self.needs(a);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Sum over columns of every row: r×c → r×1.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let value = Matrix::column_vector((0..x.rows()).map(|r| x.row(r).iter().sum()).collect());
        let rg = self.needs(a);
        self.push(value, Op::SumRows(a), rg)
    }

    /// Sum over rows of every column: r×c → 1×c.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut acc = vec![0.0; x.cols()];
        for r in 0..x.rows() {
            for (s, v) in acc.iter_mut().zip(x.row(r)) {
                *s += v;
            }
        }
        let rg = self.needs(a);
        self.push(Matrix::row_vector(acc), Op::SumCols(a), rg)
    }

    /// `τ · log Σ exp(x / τ)` over every entry, evaluated with the maximum
    /// subtracted first.
    pub fn log_sum_exp(&mut self, a: Var, temperature: f64) -> Result<Var> {
        if !(temperature > 0.0) {
            return Err(Error::Config(format!(
                "log_sum_exp temperature must be positive, got {temperature}"
            )));
        }
        let x = self.value(a);
        if x.is_empty() {
            return Err(Error::shape("log_sum_exp", "empty input"));
        }
        let max = x.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut weights = x.map(|v| ((v - max) / temperature).exp());
        let total = weights.sum();
        weights.scale_in_place(1.0 / total);
        let value = Matrix::scalar(max + temperature * total.ln());
        let rg = self.needs(a);
        Ok(self.push(value, Op::LogSumExp { x: a, weights }, rg))
    }

    /// Population variance of all entries.
    pub fn variance(&mut self, a: Var) -> Result<Var> {
        let mean = self.mean(a);
        let centered = self.sub(a, mean)?;
        let sq = self.square(centered);
        Ok(self.mean(sq))
    }

    // ---- structural -------------------------------------------------------

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let value = Matrix::from_vec(rows, cols, self.value(a).data().to_vec())?;
        let rg = self.needs(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(Error::shape("concat_cols", "row counts differ"));
        }
        let cols = av.cols() + bv.cols();
        let mut data = Vec::with_capacity(av.rows() * cols);
        for r in 0..av.rows() {
            data.extend_from_slice(av.row(r));
            data.extend_from_slice(bv.row(r));
        }
        let value = Matrix::from_vec(av.rows(), cols, data)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::ConcatCols(a, b), rg))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let x = self.value(a);
        if start > end || end > x.cols() {
            return Err(Error::shape(
                "slice_cols",
                format!("{start}..{end} of {}", x.cols()),
            ));
        }
        let mut data = Vec::with_capacity(x.rows() * (end - start));
        for r in 0..x.rows() {
            data.extend_from_slice(&x.row(r)[start..end]);
        }
        let value = Matrix::from_vec(x.rows(), end - start, data)?;
        let rg = self.needs(a);
        Ok(self.push(value, Op::SliceCols { x: a, start }, rg))
    }

    /// Exclusive prefix sums along a per-row visiting order: for row `r` with
    /// order `o`, output `[r, o[j]] = Σ_{k<j} x[r, o[k]]`. Columns absent from
    /// the order are zero.
    pub fn chain_cumsum(&mut self, a: Var, orders: Arc<Vec<Vec<usize>>>) -> Result<Var> {
        let x = self.value(a);
        if orders.len() != x.rows() || orders.iter().flatten().any(|&c| c >= x.cols()) {
            return Err(Error::shape(
                "chain_cumsum",
                "orders do not match the input",
            ));
        }
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for (r, order) in orders.iter().enumerate() {
            let mut acc = 0.0;
            for &c in order {
                out.set(r, c, acc);
                acc += x.get(r, c);
            }
        }
        let rg = self.needs(a);
        Ok(self.push(out, Op::ChainCumsum { x: a, orders }, rg))
    }

    /// Per-column linear mixing of rows with constant kernels:
    /// `out[:, c] = kernels[c] · x[:, c]`.
    pub fn column_mix(&mut self, a: Var, kernels: Arc<Vec<Matrix>>) -> Result<Var> {
        let x = self.value(a);
        let (rows, cols) = x.shape();
        if kernels.len() != cols || kernels.iter().any(|k| k.shape() != (rows, rows)) {
            return Err(Error::shape(
                "column_mix",
                "need one rows×rows kernel per column",
            ));
        }
        let mut out = Matrix::zeros(rows, cols);
        for (c, kernel) in kernels.iter().enumerate() {
            let col = x.column(c);
            for r in 0..rows {
                let dot: f64 = kernel.row(r).iter().zip(&col).map(|(k, v)| k * v).sum();
                out.set(r, c, dot);
            }
        }
        let rg = self.needs(a);
        Ok(self.push(out, Op::ColumnMix { x: a, kernels }, rg))
    }

    // ---- backward ---------------------------------------------------------

    /// Accumulates `d root / d node` into every node reachable from the 1×1
    /// `root`. Gradients from a previous backward pass are cleared first.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).shape() != (1, 1) {
            return Err(Error::shape("backward", "root must be a scalar"));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[root.0].grad = Some(Matrix::scalar(1.0));
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.local_backward(i, &g);
            self.nodes[i].grad = Some(g);
            for (parent, contrib) in contributions {
                if !self.needs(parent) {
                    continue;
                }
                match &mut self.nodes[parent.0].grad {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        Ok(())
    }

    fn local_backward(&self, i: usize, g: &Matrix) -> Vec<(Var, Matrix)> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut out = Vec::with_capacity(2);
                if self.needs(*a) {
                    let mut ga = Matrix::zeros(av.rows(), av.cols());
                    gemm(g, false, bv, true, &mut ga, 0.0);
                    out.push((*a, ga));
                }
                if self.needs(*b) {
                    let mut gb = Matrix::zeros(bv.rows(), bv.cols());
                    gemm(av, true, g, false, &mut gb, 0.0);
                    out.push((*b, gb));
                }
                out
            }
            Op::Binary(kind, bc, a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let cols = av.cols();
                let mut out = Vec::with_capacity(2);
                if self.needs(*a) {
                    let ga = match kind {
                        BinaryOp::Add | BinaryOp::Sub => g.clone(),
                        BinaryOp::Mul => {
                            let mut ga = g.clone();
                            for (idx, x) in ga.data_mut().iter_mut().enumerate() {
                                *x *= bv.data()[broadcast_index(*bc, idx, cols)];
                            }
                            ga
                        }
                    };
                    out.push((*a, ga));
                }
                if self.needs(*b) {
                    let mut gb = Matrix::zeros(bv.rows(), bv.cols());
                    for (idx, gx) in g.data().iter().enumerate() {
                        let j = broadcast_index(*bc, idx, cols);
                        gb.data_mut()[j] += match kind {
                            BinaryOp::Add => *gx,
                            BinaryOp::Sub => -*gx,
                            BinaryOp::Mul => *gx * av.data()[idx],
                        };
                    }
                    out.push((*b, gb));
                }
                out
            }
            Op::Scale(a, f) => vec![(*a, g.map(|x| x * f))],
            Op::AddScalar(a) => vec![(*a, g.clone())],
            Op::Unary(op, a) => {
                let x = self.value(*a);
                let y = &node.value;
                let mut ga = g.clone();
                for (idx, gx) in ga.data_mut().iter_mut().enumerate() {
                    let (xv, yv) = (x.data()[idx], y.data()[idx]);
                    let d = match op {
                        UnaryOp::Relu | UnaryOp::ClampMinZero => {
                            if xv > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        UnaryOp::Sigmoid => yv * (1.0 - yv),
                        UnaryOp::Log => 1.0 / xv,
                        UnaryOp::Log1p => 1.0 / (1.0 + xv),
                        UnaryOp::Exp => yv,
                        UnaryOp::Square => 2.0 * xv,
                        UnaryOp::Recip => -yv * yv,
                        UnaryOp::Neg => -1.0,
                    };
                    *gx *= d;
                }
                vec![(*a, ga)]
            }
            Op::Clamp { x, lo, hi } => {
                let xv = self.value(*x);
                let mut ga = g.clone();
                for (gx, v) in ga.data_mut().iter_mut().zip(xv.data()) {
                    if !(*v > *lo && *v < *hi) {
                        *gx = 0.0;
                    }
                }
                vec![(*x, ga)]
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            } => {
                let (rows, cols) = normed.shape();
                let gv = self.value(*gain).data();
                let mut out = Vec::with_capacity(3);
                if self.needs(*gain) || self.needs(*bias) {
                    let mut dg = vec![0.0; cols];
                    let mut db = vec![0.0; cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            dg[c] += g.get(r, c) * normed.get(r, c);
                            db[c] += g.get(r, c);
                        }
                    }
                    out.push((*gain, Matrix::row_vector(dg)));
                    out.push((*bias, Matrix::row_vector(db)));
                }
                if self.needs(*x) {
                    let mut dx = Matrix::zeros(rows, cols);
                    let inv_n = 1.0 / cols as f64;
                    for r in 0..rows {
                        let xhat = normed.row(r);
                        let gr = g.row(r);
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for c in 0..cols {
                            let d = gr[c] * gv[c];
                            mean_d += d;
                            mean_dx += d * xhat[c];
                        }
                        mean_d *= inv_n;
                        mean_dx *= inv_n;
                        for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                            let d = gr[c] * gv[c];
                            *o = inv_std[r] * (d - mean_d - xhat[c] * mean_dx);
                        }
                    }
                    out.push((*x, dx));
                }
                out
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                vec![(*a, Matrix::filled(r, c, g.item()))]
            }
            Op::SumRows(a) => {
                let (r, c) = self.value(*a).shape();
                let mut ga = Matrix::zeros(r, c);
                for row in 0..r {
                    let v = g.get(row, 0);
                    ga.row_mut(row).iter_mut().for_each(|x| *x = v);
                }
                vec![(*a, ga)]
            }
            Op::SumCols(a) => {
                let (r, c) = self.value(*a).shape();
                let mut ga = Matrix::zeros(r, c);
                for row in 0..r {
                    ga.row_mut(row).copy_from_slice(g.row(0));
                }
                vec![(*a, ga)]
            }
            Op::LogSumExp { x, weights } => vec![(*x, weights.map(|w| w * g.item()))],
            Op::Reshape(a) => {
                let (r, c) = self.value(*a).shape();
                vec![(
                    *a,
                    Matrix::from_vec(r, c, g.data().to_vec()).expect("same size"),
                )]
            }
            Op::ConcatCols(a, b) => {
                let ca = self.value(*a).cols();
                let cb = self.value(*b).cols();
                let rows = g.rows();
                let mut ga = Vec::with_capacity(rows * ca);
                let mut gb = Vec::with_capacity(rows * cb);
                for r in 0..rows {
                    ga.extend_from_slice(&g.row(r)[..ca]);
                    gb.extend_from_slice(&g.row(r)[ca..]);
                }
                vec![
                    (*a, Matrix::from_vec(rows, ca, ga).expect("shape")),
                    (*b, Matrix::from_vec(rows, cb, gb).expect("shape")),
                ]
            }
            Op::SliceCols { x, start } => {
                let (rows, cols) = self.value(*x).shape();
                let mut gx = Matrix::zeros(rows, cols);
                let w = g.cols();
                for r in 0..rows {
                    gx.row_mut(r)[*start..*start + w].copy_from_slice(g.row(r));
                }
                vec![(*x, gx)]
            }
            Op::ChainCumsum { x, orders } => {
                let (rows, cols) = self.value(*x).shape();
                let mut gx = Matrix::zeros(rows, cols);
                for (r, order) in orders.iter().enumerate() {
                    let mut acc = 0.0;
                    for &c in order.iter().rev() {
                        gx.set(r, c, acc);
                        acc += g.get(r, c);
                    }
                }
                vec![(*x, gx)]
            }
            Op::ColumnMix { x, kernels } => {
                let (rows, cols) = self.value(*x).shape();
                let mut gx = Matrix::zeros(rows, cols);
                for (c, kernel) in kernels.iter().enumerate() {
                    for r in 0..rows {
                        let gr = g.get(r, c);
                        if gr == 0.0 {
                            continue;
                        }
                        for (s, k) in kernel.row(r).iter().enumerate() {
                            let cur = gx.get(s, c);
                            gx.set(s, c, cur + k * gr);
                        }
                    }
                }
                vec![(*x, gx)]
            }
        }
    }

    /// Hash of which side of every kink each piecewise-linear node sits on.
    /// Two evaluations with equal signatures lie in the same smooth piece.
    pub fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Unary(UnaryOp::Relu | UnaryOp::ClampMinZero, a) => {
                    for v in self.value(*a).data() {
                        (*v > 0.0).hash(&mut h);
                    }
                }
                Op::Clamp { x, lo, hi } => {
                    for v in self.value(*x).data() {
                        ((*v > *lo) as u8 + 2 * (*v < *hi) as u8).hash(&mut h);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Smallest distance from any piecewise node input to its kink.
    pub fn min_kink_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for node in &self.nodes {
            match &node.op {
                Op::Unary(UnaryOp::Relu | UnaryOp::ClampMinZero, a) => {
                    for v in self.value(*a).data() {
                        best = best.min(v.abs());
                    }
                }
                Op::Clamp { x, lo, hi } => {
                    for v in self.value(*x).data() {
                        best = best.min((v - lo).abs()).min((v - hi).abs());
                    }
                }
                _ => {}
            }
        }
        best
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn broadcast_kind(a: (usize, usize), b: (usize, usize)) -> Option<Broadcast> {
    if a == b {
        Some(Broadcast::Same)
    } else if b == (1, 1) {
        Some(Broadcast::Scalar)
    } else if b == (1, a.1) {
        Some(Broadcast::Row)
    } else if b == (a.0, 1) {
        Some(Broadcast::Col)
    } else {
        None
    }
}

#[inline]
fn broadcast_index(bc: Broadcast, idx: usize, cols: usize) -> usize {
    match bc {
        Broadcast::Same => idx,
        Broadcast::Scalar => 0,
        Broadcast::Row => idx % cols,
        Broadcast::Col => idx / cols,
    }
}
