//! Reverse-mode differentiation over a linear tape of matrix operations.
//!
//! Every operation appends a node holding its forward value. `backward`
//! walks the tape in reverse and returns the gradient of a scalar loss with
//! respect to every node that requires one. Constants and detached copies
//! never require gradients, which is how stop-gradient is expressed.

use std::sync::Arc;

use super::kernels;
use super::matrix::{gemm, Matrix};
use super::AutodiffError;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    RowScale(Var, Arc<Vec<f64>>),
    Mish(Var),
    Tanh(Var),
    Exp(Var),
    SoftClamp { x: Var, half_range: f64 },
    Log1mTanhSq(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Matrix, rstd: Vec<f64> },
    GroupSoftmax { x: Var, group: usize },
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Sum(Var),
    RowSum(Var),
    SoftCrossEntropy { logits: Var, target: Matrix, probs: Matrix },
    TwoHotDecode { logits: Var, centers: Arc<Vec<f64>>, probs: Matrix, expect: Vec<f64> },
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Recorded forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, or `None` when `v` does not
    /// participate (constants, detached values, unused nodes).
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
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

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "not a scalar node");
        m.data()[0]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    /// A value that receives gradients (parameters, probes).
    pub fn variable(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A value that never receives gradients.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Stop-gradient: a constant copy of `v`'s current value.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ma, mb) = (self.value(a), self.value(b));
        let mut out = Matrix::zeros(ma.rows(), mb.cols());
        gemm(1.0, ma, false, mb, false, 0.0, &mut out);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::MatMul(a, b), rg)
    }

    /// Adds a `1 x cols` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let (mx, mr) = (self.value(x), self.value(row));
        assert_eq!(mr.rows(), 1, "add_row expects a single row");
        assert_eq!(mx.cols(), mr.cols(), "add_row width mismatch");
        let mut out = mx.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(mr.data()) {
                *o += b;
            }
        }
        let rg = self.rg(x) || self.rg(row);
        self.push(out, Op::AddRow(x, row), rg)
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let (ma, mb) = (self.value(a), self.value(b));
        assert_eq!(ma.shape(), mb.shape(), "elementwise shape mismatch");
        let data = ma.data().iter().zip(mb.data()).map(|(&x, &y)| f(x, y)).collect();
        Matrix::from_vec(ma.rows(), ma.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x + s);
        let rg = self.rg(a);
        self.push(out, Op::AddScalar(a), rg)
    }

    /// Multiplies row `r` of `x` by the constant `weights[r]`.
    pub fn row_scale(&mut self, x: Var, weights: Vec<f64>) -> Var {
        let mut out = self.value(x).clone();
        assert_eq!(out.rows(), weights.len(), "row_scale length mismatch");
        for (r, w) in weights.iter().enumerate() {
            out.row_mut(r).iter_mut().for_each(|v| *v *= w);
        }
        let rg = self.rg(x);
        self.push(out, Op::RowScale(x, Arc::new(weights)), rg)
    }

    pub fn mish(&mut self, x: Var) -> Var {
        let out = self.value(x).map(kernels::mish);
        let rg = self.rg(x);
        self.push(out, Op::Mish(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        let rg = self.rg(x);
        self.push(out, Op::Tanh(x), rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::exp);
        let rg = self.rg(x);
        self.push(out, Op::Exp(x), rg)
    }

    /// Smoothly maps the real line onto `(lo, hi)`.
    pub fn soft_clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let half_range = 0.5 * (hi - lo);
        let out = self.value(x).map(|v| lo + half_range * (v.tanh() + 1.0));
        let rg = self.rg(x);
        self.push(out, Op::SoftClamp { x, half_range }, rg)
    }

    /// `log(1 - tanh(x)^2)` elementwise.
    pub fn log1m_tanh_sq(&mut self, x: Var) -> Var {
        let out = self.value(x).map(kernels::log1m_tanh_sq);
        let rg = self.rg(x);
        self.push(out, Op::Log1mTanhSq(x), rg)
    }

    /// Row-wise layer normalization with learnable `1 x cols` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let mut xhat = self.value(x).clone();
        let mut rstd = Vec::with_capacity(xhat.rows());
        for r in 0..xhat.rows() {
            rstd.push(kernels::layer_norm_row(xhat.row_mut(r)));
        }
        let (g, b) = (self.value(gain), self.value(bias));
        assert_eq!(g.shape(), (1, xhat.cols()), "layer norm gain shape");
        assert_eq!(b.shape(), (1, xhat.cols()), "layer norm bias shape");
        let mut out = xhat.clone();
        for r in 0..out.rows() {
            for ((o, gv), bv) in out.row_mut(r).iter_mut().zip(g.data()).zip(b.data()) {
                *o = *o * gv + bv;
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        self.push(out, Op::LayerNorm { x, gain, bias, xhat, rstd }, rg)
    }

    /// Softmax over consecutive groups of `group` columns in every row.
    pub fn group_softmax(&mut self, x: Var, group: usize) -> Var {
        let mut out = self.value(x).clone();
        assert!(group > 0 && out.cols() % group == 0, "group softmax width");
        for r in 0..out.rows() {
            kernels::group_softmax_inplace(out.row_mut(r), group);
        }
        let rg = self.rg(x);
        self.push(out, Op::GroupSoftmax { x, group }, rg)
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Matrix::hconcat(&mats);
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(out, Op::Concat(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Var {
        let out = self.value(x).slice_cols(start, width);
        let rg = self.rg(x);
        self.push(out, Op::Slice { x, start }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Matrix::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(out, Op::Sum(x), rg)
    }

    pub fn row_sum(&mut self, x: Var) -> Var {
        let m = self.value(x);
        let out = Matrix::column((0..m.rows()).map(|r| m.row(r).iter().sum()).collect());
        let rg = self.rg(x);
        self.push(out, Op::RowSum(x), rg)
    }

    /// Per-row `-sum_i target_i * log softmax(logits)_i` as a `rows x 1` column.
    pub fn soft_cross_entropy(&mut self, logits: Var, target: Matrix) -> Var {
        let ml = self.value(logits);
        assert_eq!(ml.shape(), target.shape(), "soft cross-entropy shape mismatch");
        let mut probs = ml.clone();
        let mut loss = Vec::with_capacity(ml.rows());
        for r in 0..ml.rows() {
            let lse = kernels::logsumexp(ml.row(r));
            let l: f64 = ml.row(r).iter().zip(target.row(r)).map(|(x, t)| -t * (x - lse)).sum();
            loss.push(l);
            kernels::softmax_inplace(probs.row_mut(r));
        }
        let rg = self.rg(logits);
        self.push(Matrix::column(loss), Op::SoftCrossEntropy { logits, target, probs }, rg)
    }

    /// Per-row `symexp(sum_i softmax(logits)_i * centers_i)` as a `rows x 1` column.
    pub fn two_hot_decode(&mut self, logits: Var, centers: Arc<Vec<f64>>) -> Var {
        let ml = self.value(logits);
        assert_eq!(ml.cols(), centers.len(), "decode width mismatch");
        let mut probs = ml.clone();
        let mut expect = Vec::with_capacity(ml.rows());
        for r in 0..ml.rows() {
            kernels::softmax_inplace(probs.row_mut(r));
            expect.push(probs.row(r).iter().zip(centers.iter()).map(|(p, c)| p * c).sum());
        }
        let out = Matrix::column(expect.iter().map(|&s| kernels::symexp(s)).collect());
        let rg = self.rg(logits);
        self.push(out, Op::TwoHotDecode { logits, centers, probs, expect }, rg)
    }

    /// Gradient of the scalar `loss` with respect to every participating node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        let node = self.nodes.get(loss.0).ok_or(AutodiffError::NoTrace)?;
        if node.value.shape() != (1, 1) {
            return Err(AutodiffError::NonScalarLoss(node.value.rows(), node.value.cols()));
        }
        let l = node.value.data()[0];
        if !l.is_finite() {
            return Err(AutodiffError::NonFiniteLoss(l));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        if !node.requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Matrix::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &dy, &mut grads);
            }
            grads[idx] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, dy: &Matrix, grads: &mut [Option<Matrix>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, g: Matrix| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.axpy(1.0, &g),
                slot @ None => *slot = Some(g),
            }
        };
        let elementwise = |x: &Matrix, f: &dyn Fn(f64, f64) -> f64| {
            let data = x.data().iter().zip(dy.data()).map(|(&a, &g)| f(a, g)).collect();
            Matrix::from_vec(x.rows(), x.cols(), data)
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ma, mb) = (val(*a), val(*b));
                if self.rg(*a) {
                    let mut ga = Matrix::zeros(ma.rows(), ma.cols());
                    gemm(1.0, dy, false, mb, true, 0.0, &mut ga);
                    acc(*a, ga);
                }
                if self.rg(*b) {
                    let mut gb = Matrix::zeros(mb.rows(), mb.cols());
                    gemm(1.0, ma, true, dy, false, 0.0, &mut gb);
                    acc(*b, gb);
                }
            }
            Op::AddRow(x, row) => {
                if self.rg(*row) {
                    let mut g = Matrix::zeros(1, dy.cols());
                    for r in 0..dy.rows() {
                        for (o, d) in g.data_mut().iter_mut().zip(dy.row(r)) {
                            *o += d;
                        }
                    }
                    acc(*row, g);
                }
                acc(*x, dy.clone());
            }
            Op::Add(a, b) => {
                acc(*a, dy.clone());
                acc(*b, dy.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, dy.clone());
                if self.rg(*b) {
                    acc(*b, dy.map(|g| -g));
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    acc(*a, elementwise(val(*b), &|bv, g| bv * g));
                }
                if self.rg(*b) {
                    acc(*b, elementwise(val(*a), &|av, g| av * g));
                }
            }
            Op::Scale(a, s) => acc(*a, dy.map(|g| g * s)),
            Op::AddScalar(a) => acc(*a, dy.clone()),
            Op::RowScale(x, w) => {
                let mut g = dy.clone();
                for (r, wv) in w.iter().enumerate() {
                    g.row_mut(r).iter_mut().for_each(|v| *v *= wv);
                }
                acc(*x, g);
            }
            Op::Mish(x) => acc(*x, elementwise(val(*x), &|xv, g| g * kernels::mish_grad(xv))),
            Op::Tanh(x) => acc(*x, elementwise(&node.value, &|y, g| g * (1.0 - y * y))),
            Op::Exp(x) => acc(*x, elementwise(&node.value, &|y, g| g * y)),
            Op::SoftClamp { x, half_range } => {
                let h = *half_range;
                acc(
                    *x,
                    elementwise(val(*x), &|xv, g| {
                        let t = xv.tanh();
                        g * h * (1.0 - t * t)
                    }),
                )
            }
            Op::Log1mTanhSq(x) => acc(*x, elementwise(val(*x), &|xv, g| -2.0 * g * xv.tanh())),
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let gv = val(*gain);
                let cols = xhat.cols();
                if self.rg(*gain) || self.rg(*bias) {
                    let mut gg = Matrix::zeros(1, cols);
                    let mut gb = Matrix::zeros(1, cols);
                    for r in 0..dy.rows() {
                        for c in 0..cols {
                            gg.data_mut()[c] += dy.get(r, c) * xhat.get(r, c);
                            gb.data_mut()[c] += dy.get(r, c);
                        }
                    }
                    acc(*gain, gg);
                    acc(*bias, gb);
                }
                if self.rg(*x) {
                    let n = cols as f64;
                    let mut gx = Matrix::zeros(dy.rows(), cols);
                    let mut dxhat = vec![0.0; cols];
                    for r in 0..dy.rows() {
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for c in 0..cols {
                            dxhat[c] = dy.get(r, c) * gv.data()[c];
                            s1 += dxhat[c];
                            s2 += dxhat[c] * xhat.get(r, c);
                        }
                        let row = gx.row_mut(r);
                        for c in 0..cols {
                            row[c] = rstd[r] / n * (n * dxhat[c] - s1 - xhat.get(r, c) * s2);
                        }
                    }
                    acc(*x, gx);
                }
            }
            Op::GroupSoftmax { x, group } => {
                let y = &node.value;
                let mut gx = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, dr) = (y.row(r), dy.row(r));
                    let out = gx.row_mut(r);
                    for start in (0..yr.len()).step_by(*group) {
                        let end = start + group;
                        let dot: f64 = (start..end).map(|c| yr[c] * dr[c]).sum();
                        for c in start..end {
                            out[c] = yr[c] * (dr[c] - dot);
                        }
                    }
                }
                acc(*x, gx);
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if self.rg(p) {
                        acc(p, dy.slice_cols(off, w));
                    }
                    off += w;
                }
            }
            Op::Slice { x, start } => {
                if self.rg(*x) {
                    let mx = val(*x);
                    let mut g = Matrix::zeros(mx.rows(), mx.cols());
                    let w = dy.cols();
                    for r in 0..dy.rows() {
                        g.row_mut(r)[*start..*start + w].copy_from_slice(dy.row(r));
                    }
                    acc(*x, g);
                }
            }
            Op::Sum(x) => {
                let mx = val(*x);
                acc(*x, Matrix::filled(mx.rows(), mx.cols(), dy.data()[0]));
            }
            Op::RowSum(x) => {
                let mx = val(*x);
                let mut g = Matrix::zeros(mx.rows(), mx.cols());
                for r in 0..mx.rows() {
                    let d = dy.get(r, 0);
                    g.row_mut(r).iter_mut().for_each(|v| *v = d);
                }
                acc(*x, g);
            }
            Op::SoftCrossEntropy { logits, target, probs } => {
                let mut g = Matrix::zeros(probs.rows(), probs.cols());
                for r in 0..probs.rows() {
                    let d = dy.get(r, 0);
                    let tsum: f64 = target.row(r).iter().sum();
                    let out = g.row_mut(r);
                    for (c, o) in out.iter_mut().enumerate() {
                        *o = d * (tsum * probs.get(r, c) - target.get(r, c));
                    }
                }
                acc(*logits, g);
            }
            Op::TwoHotDecode { logits, centers, probs, expect } => {
                let mut g = Matrix::zeros(probs.rows(), probs.cols());
                for r in 0..probs.rows() {
                    let s = expect[r];
                    let d = dy.get(r, 0) * s.abs().exp();
                    let out = g.row_mut(r);
                    for (c, o) in out.iter_mut().enumerate() {
                        *o = d * probs.get(r, c) * (centers[c] - s);
                    }
                }
                acc(*logits, g);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_params_has_unit_gradient() {
        let mut t = Tape::new();
        let p = t.variable(Matrix::from_vec(2, 2, vec![0.3, -1.0, 2.0, 4.0]));
        let l = t.sum(p);
        let g = t.backward(l).unwrap();
        assert_eq!(g.wrt(p).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn stop_gradient_branch_receives_nothing() {
        let mut t = Tape::new();
        let x = t.variable(Matrix::row_vector(vec![1.5, -0.5, 2.0]));
        let two_x = t.scale(x, 2.0);
        let target = t.detach(two_x);
        let diff = t.sub(target, x);
        let sq = t.mul(diff, diff);
        let l = t.sum(sq);
        let g = t.backward(l).unwrap();
        // d/dx ||sg(2x) - x||^2 = -2 (sg(2x) - x) = -2x at these values
        let gx = g.wrt(x).unwrap();
        for (gv, xv) in gx.data().iter().zip([1.5, -0.5, 2.0]) {
            assert!((gv - (-2.0 * xv)).abs() < 1e-12);
        }
        assert!(g.wrt(target).is_none());
    }

    #[test]
    fn backward_errors() {
        let t = Tape::new();
        assert!(matches!(t.backward(Var(0)), Err(AutodiffError::NoTrace)));
        let mut t = Tape::new();
        let x = t.variable(Matrix::scalar(f64::NAN));
        assert!(matches!(t.backward(x), Err(AutodiffError::NonFiniteLoss(_))));
        let y = t.variable(Matrix::zeros(2, 1));
        assert!(matches!(t.backward(y), Err(AutodiffError::NonScalarLoss(2, 1))));
    }

    fn numeric_grad(f: &dyn Fn(&Matrix) -> f64, x: &Matrix) -> Matrix {
        let h = 1e-6;
        let mut g = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            g.data_mut()[i] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn check(build: &dyn Fn(&mut Tape, Var) -> Var, x0: Matrix) {
        let eval = |x: &Matrix| {
            let mut t = Tape::new();
            let v = t.variable(x.clone());
            let l = build(&mut t, v);
            t.scalar(l)
        };
        let mut t = Tape::new();
        let v = t.variable(x0.clone());
        let l = build(&mut t, v);
        let g = t.backward(l).unwrap();
        let analytic = g.wrt(v).unwrap().clone();
        let numeric = numeric_grad(&eval, &x0);
        for (a, n) in analytic.data().iter().zip(numeric.data()) {
            let denom = a.abs().max(n.abs()).max(1e-6);
            assert!((a - n).abs() / denom < 1e-5, "analytic {a} vs numeric {n}");
        }
    }

    fn sample(rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols).map(|i| ((i as f64 * 0.7311).sin() * 1.3) + 0.05 * i as f64).collect();
        Matrix::from_vec(rows, cols, data)
    }

    #[test]
    fn op_gradients_match_differences() {
        check(&|t, x| { let y = t.mish(x); t.sum(y) }, sample(3, 4));
        check(&|t, x| { let y = t.tanh(x); let z = t.mul(y, x); t.sum(z) }, sample(3, 4));
        check(&|t, x| { let y = t.group_softmax(x, 4); let w = t.constant(sample(3, 8)); let z = t.mul(y, w); t.sum(z) }, sample(3, 8));
        check(&|t, x| {
            let g = t.constant(Matrix::row_vector(vec![1.2, -0.4, 0.9, 2.0]));
            let b = t.constant(Matrix::row_vector(vec![0.1, 0.2, -0.3, 0.0]));
            let y = t.layer_norm(x, g, b);
            let w = t.constant(sample(3, 4));
            let z = t.mul(y, w);
            t.sum(z)
        }, sample(3, 4));
        check(&|t, x| { let y = t.soft_cross_entropy(x, Matrix::from_vec(2, 3, vec![0.2, 0.8, 0.0, 0.0, 0.5, 0.5])); t.sum(y) }, sample(2, 3));
        check(&|t, x| { let y = t.two_hot_decode(x, Arc::new(vec![-1.0, 0.0, 0.5, 1.0])); t.sum(y) }, sample(2, 4));
        check(&|t, x| { let y = t.soft_clamp(x, -5.0, 2.0); let e = t.exp(y); t.sum(e) }, sample(2, 3));
        check(&|t, x| { let y = t.log1m_tanh_sq(x); t.sum(y) }, sample(2, 3));
        check(&|t, x| {
            let w = t.constant(sample(4, 2));
            let y = t.matmul(x, w);
            let b = t.constant(Matrix::row_vector(vec![0.5, -0.5]));
            let z = t.add_row(y, b);
            let s = t.slice_cols(z, 1, 1);
            let c = t.concat(&[s, z]);
            let r = t.row_sum(c);
            let q = t.row_scale(r, vec![1.0, -2.0, 0.5]);
            let q2 = t.mul(q, q);
            t.sum(q2)
        }, sample(3, 4));
    }
}
