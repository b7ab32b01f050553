//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] is an arena of nodes appended in evaluation order, so the
//! vector index is already a topological order. Operations never fail:
//! shape misuse panics (callers validate at their own API boundary), and the
//! first non-finite value is remembered and reported by [`Tape::backward`]
//! or [`Tape::check_finite`].

use crate::error::{Error, Result};
use crate::tensor::{log_sum_exp, softmax_in_place, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

type ElementFn = Box<dyn Fn(f64) -> f64>;

enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Abs(Var),
    Softplus(Var),
    Clamp(Var, f64, f64),
    SumAll(Var),
    MeanAll(Var),
    SumCols(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    SoftmaxRows(Var),
    SoftmaxCrossEntropy(Var, Vec<usize>),
    BceWithLogits(Var, Tensor),
    GaussianNll(Tensor, Var, Var),
    KlStdNormal(Var, Var),
    Map(Var, ElementFn),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::Relu(..) => "relu",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Exp(..) => "exp",
            Op::Ln(..) => "ln",
            Op::Square(..) => "square",
            Op::Abs(..) => "abs",
            Op::Softplus(..) => "softplus",
            Op::Clamp(..) => "clamp",
            Op::SumAll(..) => "sum",
            Op::MeanAll(..) => "mean",
            Op::SumCols(..) => "sum_cols",
            Op::SliceCols(..) => "slice_cols",
            Op::ConcatCols(..) => "concat_cols",
            Op::SoftmaxRows(..) => "softmax",
            Op::SoftmaxCrossEntropy(..) => "softmax_cross_entropy",
            Op::BceWithLogits(..) => "bce_with_logits",
            Op::GaussianNll(..) => "gaussian_nll",
            Op::KlStdNormal(..) => "kl_std_normal",
            Op::Map(..) => "map",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    non_finite: Option<(usize, &'static str)>,
}

/// Gradients of a scalar with respect to every differentiable leaf.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `var`. Leaves the loss does not depend on get zeros.
    pub fn wrt(&self, var: Var) -> &Tensor {
        self.grads[var.0]
            .as_ref()
            .expect("gradient requested for a node that is not a differentiable leaf")
    }

    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Tensor {
        self.grads[var.0]
            .take()
            .expect("gradient requested for a node that is not a differentiable leaf")
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

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Fails with the first operation that produced a non-finite value.
    pub fn check_finite(&self) -> Result<()> {
        match self.non_finite {
            Some((_, op)) => Err(Error::numeric(op)),
            None => Ok(()),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        if self.non_finite.is_none() && !value.is_finite() {
            self.non_finite = Some((self.nodes.len(), op.name()));
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn unary(&mut self, a: Var, value: Tensor, op: Op) -> Var {
        let ng = self.nodes[a.0].needs_grad;
        self.push(value, op, ng)
    }

    fn binary(&mut self, a: Var, b: Var, value: Tensor, op: Op) -> Var {
        let ng = self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad;
        self.push(value, op, ng)
    }

    fn assert_same(&self, op: &str, a: Var, b: Var) {
        let (x, y) = (self.value(a), self.value(b));
        assert!(
            x.same_shape(y),
            "{op}: shape {:?} vs {:?}",
            x.shape(),
            y.shape()
        );
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self
            .value(a)
            .matmul(self.value(b))
            .unwrap_or_else(|e| panic!("{e}"));
        self.binary(a, b, value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.assert_same("add", a, b);
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.binary(a, b, value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.assert_same("sub", a, b);
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.binary(a, b, value, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.assert_same("mul", a, b);
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.binary(a, b, value, Op::Mul(a, b))
    }

    /// `a (n x p) + row (1 x p)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let value = self
            .value(a)
            .add_row_broadcast(self.value(row))
            .unwrap_or_else(|e| panic!("{e}"));
        self.binary(a, row, value, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x * c);
        self.unary(a, value, Op::Scale(a, c))
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x + c);
        self.unary(a, value, Op::Offset(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.unary(a, value, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.unary(a, value, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.unary(a, value, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        self.unary(a, value, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        self.unary(a, value, Op::Ln(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        self.unary(a, value, Op::Square(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::abs);
        self.unary(a, value, Op::Abs(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(softplus);
        self.unary(a, value, Op::Softplus(a))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        self.unary(a, value, Op::Clamp(a, lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.unary(a, value, Op::SumAll(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Tensor::scalar(t.sum() / t.len() as f64);
        self.unary(a, value, Op::MeanAll(a))
    }

    /// Per-row sums, `n x p -> n x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_over_cols();
        self.unary(a, value, Op::SumCols(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let t = self.value(a);
        assert!(
            start <= end && end <= t.cols(),
            "slice_cols: [{start}, {end}) out of {} columns",
            t.cols()
        );
        let value = t.slice_cols(start, end);
        self.unary(a, value, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let tensors: Vec<&Tensor> = parts.iter().map(|&v| self.value(v)).collect();
        let value = Tensor::concat_cols(&tensors).unwrap_or_else(|e| panic!("{e}"));
        let ng = parts.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push(value, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).softmax_rows();
        self.unary(a, value, Op::SoftmaxRows(a))
    }

    /// Per-row `-log softmax(logits)[target]`, `n x c -> n x 1`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let t = self.value(logits);
        assert_eq!(t.rows(), targets.len(), "softmax_cross_entropy: target count");
        let losses: Vec<f64> = targets
            .iter()
            .enumerate()
            .map(|(r, &k)| {
                let row = t.row_slice(r);
                assert!(k < row.len(), "softmax_cross_entropy: class {k} out of range");
                log_sum_exp(row) - row[k]
            })
            .collect();
        let value = Tensor::column(&losses);
        self.unary(logits, value, Op::SoftmaxCrossEntropy(logits, targets.to_vec()))
    }

    /// Elementwise `-[y log σ(l) + (1 - y) log(1 - σ(l))]` in logit space.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Tensor) -> Var {
        let t = self.value(logits);
        assert!(t.same_shape(&targets), "bce_with_logits: target shape");
        let value = t.zip_map(&targets, |l, y| softplus(l) - y * l);
        self.unary(logits, value, Op::BceWithLogits(logits, targets))
    }

    /// Elementwise Gaussian negative log-likelihood of `observed` under
    /// `N(mean, exp(logvar))`.
    pub fn gaussian_nll(&mut self, observed: Tensor, mean: Var, logvar: Var) -> Var {
        self.assert_same("gaussian_nll", mean, logvar);
        let (m, lv) = (self.value(mean), self.value(logvar));
        assert!(m.same_shape(&observed), "gaussian_nll: observed shape");
        let data = observed
            .data()
            .iter()
            .zip(m.data().iter().zip(lv.data()))
            .map(|(&x, (&mu, &l))| {
                let d = x - mu;
                0.5 * (l + d * d * (-l).exp() + LN_2PI)
            })
            .collect();
        let value = Tensor::new(m.rows(), m.cols(), data).expect("shape checked");
        self.binary(mean, logvar, value, Op::GaussianNll(observed, mean, logvar))
    }

    /// Per-row `KL(N(mu, exp(logvar)) || N(0, I))`, `n x k -> n x 1`.
    pub fn kl_std_normal(&mut self, mu: Var, logvar: Var) -> Var {
        self.assert_same("kl_std_normal", mu, logvar);
        let (m, lv) = (self.value(mu), self.value(logvar));
        let per_row: Vec<f64> = (0..m.rows())
            .map(|r| {
                m.row_slice(r)
                    .iter()
                    .zip(lv.row_slice(r))
                    .map(|(&u, &l)| 0.5 * (u * u + (l.exp_m1() - l)))
                    .sum()
            })
            .collect();
        let value = Tensor::column(&per_row);
        self.binary(mu, logvar, value, Op::KlStdNormal(mu, logvar))
    }

    /// Elementwise map with a caller-supplied derivative.
    pub fn map(
        &mut self,
        a: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64) -> f64 + 'static,
    ) -> Var {
        let value = self.value(a).map(f);
        self.unary(a, value, Op::Map(a, Box::new(df)))
    }

    /// Back-propagates from the scalar `loss`, consuming the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        self.check_finite()?;
        let shape = self.value(loss).shape();
        if shape != [1, 1] {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {shape:?}"
            )));
        }
        let nodes = self.nodes;
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            backprop_node(&nodes, node, &g, &mut grads);
            if !g.is_finite() {
                return Err(Error::numeric(format!("{} (gradient)", node.op.name())));
            }
        }

        for (i, node) in nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) {
                if grads[i].is_none() {
                    grads[i] = Some(Tensor::zeros(node.value.rows(), node.value.cols()));
                }
            } else {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Tensor>], target: Var, g: Tensor) {
    if !nodes[target.0].needs_grad {
        return;
    }
    match &mut grads[target.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn backprop_node(nodes: &[Node], node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let val = |v: Var| &nodes[v.0].value;
    let out = &node.value;
    match &node.op {
        Op::Leaf | Op::Constant => {}
        Op::MatMul(a, b) => {
            if nodes[a.0].needs_grad {
                accumulate(nodes, grads, *a, g.matmul_transposed(val(*b)));
            }
            if nodes[b.0].needs_grad {
                accumulate(nodes, grads, *b, val(*a).transposed_matmul(g));
            }
        }
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g.map(|x| -x));
        }
        Op::Mul(a, b) => {
            accumulate(nodes, grads, *a, g.zip_map(val(*b), |x, y| x * y));
            accumulate(nodes, grads, *b, g.zip_map(val(*a), |x, y| x * y));
        }
        Op::AddRow(a, row) => {
            accumulate(nodes, grads, *a, g.clone());
            if nodes[row.0].needs_grad {
                accumulate(nodes, grads, *row, g.sum_over_rows());
            }
        }
        Op::Scale(a, c) => accumulate(nodes, grads, *a, g.map(|x| x * c)),
        Op::Offset(a) => accumulate(nodes, grads, *a, g.clone()),
        Op::Relu(a) => accumulate(
            nodes,
            grads,
            *a,
            g.zip_map(val(*a), |gi, x| if x > 0.0 { gi } else { 0.0 }),
        ),
        Op::Tanh(a) => accumulate(nodes, grads, *a, g.zip_map(out, |gi, y| gi * (1.0 - y * y))),
        Op::Sigmoid(a) => {
            accumulate(nodes, grads, *a, g.zip_map(out, |gi, y| gi * y * (1.0 - y)))
        }
        Op::Exp(a) => accumulate(nodes, grads, *a, g.zip_map(out, |gi, y| gi * y)),
        Op::Ln(a) => accumulate(nodes, grads, *a, g.zip_map(val(*a), |gi, x| gi / x)),
        Op::Square(a) => accumulate(nodes, grads, *a, g.zip_map(val(*a), |gi, x| 2.0 * gi * x)),
        Op::Abs(a) => accumulate(
            nodes,
            grads,
            *a,
            g.zip_map(val(*a), |gi, x| {
                if x > 0.0 {
                    gi
                } else if x < 0.0 {
                    -gi
                } else {
                    0.0
                }
            }),
        ),
        Op::Softplus(a) => {
            accumulate(nodes, grads, *a, g.zip_map(val(*a), |gi, x| gi * sigmoid(x)))
        }
        Op::Clamp(a, lo, hi) => accumulate(
            nodes,
            grads,
            *a,
            g.zip_map(val(*a), |gi, x| if x >= *lo && x <= *hi { gi } else { 0.0 }),
        ),
        Op::SumAll(a) => {
            let t = val(*a);
            accumulate(nodes, grads, *a, Tensor::full(t.rows(), t.cols(), g.item()));
        }
        Op::MeanAll(a) => {
            let t = val(*a);
            let each = g.item() / t.len() as f64;
            accumulate(nodes, grads, *a, Tensor::full(t.rows(), t.cols(), each));
        }
        Op::SumCols(a) => {
            let t = val(*a);
            let mut d = Tensor::zeros(t.rows(), t.cols());
            for r in 0..t.rows() {
                let gr = g.get(r, 0);
                for c in 0..t.cols() {
                    d.set(r, c, gr);
                }
            }
            accumulate(nodes, grads, *a, d);
        }
        Op::SliceCols(a, start) => {
            let t = val(*a);
            let mut d = Tensor::zeros(t.rows(), t.cols());
            for r in 0..t.rows() {
                for c in 0..g.cols() {
                    d.set(r, start + c, g.get(r, c));
                }
            }
            accumulate(nodes, grads, *a, d);
        }
        Op::ConcatCols(parts) => {
            let mut start = 0;
            for p in parts {
                let w = val(*p).cols();
                if nodes[p.0].needs_grad {
                    accumulate(nodes, grads, *p, g.slice_cols(start, start + w));
                }
                start += w;
            }
        }
        Op::SoftmaxRows(a) => {
            // d_in = y * (g - <g, y>) per row
            let mut d = Tensor::zeros(out.rows(), out.cols());
            for r in 0..out.rows() {
                let y = out.row_slice(r);
                let gr = g.row_slice(r);
                let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                for c in 0..out.cols() {
                    d.set(r, c, y[c] * (gr[c] - dot));
                }
            }
            accumulate(nodes, grads, *a, d);
        }
        Op::SoftmaxCrossEntropy(a, targets) => {
            let mut d = val(*a).clone();
            let cols = d.cols();
            for (r, &k) in targets.iter().enumerate() {
                let row = &mut d.data_mut()[r * cols..(r + 1) * cols];
                softmax_in_place(row);
                row[k] -= 1.0;
                let gr = g.get(r, 0);
                for x in row.iter_mut() {
                    *x *= gr;
                }
            }
            accumulate(nodes, grads, *a, d);
        }
        Op::BceWithLogits(a, targets) => {
            let d = val(*a).zip_map(targets, |l, y| sigmoid(l) - y);
            accumulate(nodes, grads, *a, d.zip_map(g, |x, gi| x * gi));
        }
        Op::GaussianNll(observed, mean, logvar) => {
            let (m, lv) = (val(*mean), val(*logvar));
            let n = m.len();
            let mut dm = Vec::with_capacity(n);
            let mut dlv = Vec::with_capacity(n);
            for i in 0..n {
                let diff = observed.data()[i] - m.data()[i];
                let prec = (-lv.data()[i]).exp();
                let gi = g.data()[i];
                dm.push(-gi * diff * prec);
                dlv.push(gi * 0.5 * (1.0 - diff * diff * prec));
            }
            let (rows, cols) = (m.rows(), m.cols());
            accumulate(nodes, grads, *mean, Tensor::new(rows, cols, dm).expect("shape"));
            accumulate(nodes, grads, *logvar, Tensor::new(rows, cols, dlv).expect("shape"));
        }
        Op::KlStdNormal(mu, logvar) => {
            let (m, lv) = (val(*mu), val(*logvar));
            let mut dm = m.clone();
            let mut dlv = lv.map(|l| 0.5 * l.exp_m1());
            for r in 0..m.rows() {
                let gr = g.get(r, 0);
                for c in 0..m.cols() {
                    dm.set(r, c, dm.get(r, c) * gr);
                    dlv.set(r, c, dlv.get(r, c) * gr);
                }
            }
            accumulate(nodes, grads, *mu, dm);
            accumulate(nodes, grads, *logvar, dlv);
        }
        Op::Map(a, df) => accumulate(nodes, grads, *a, g.zip_map(val(*a), |gi, x| gi * df(x))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn constant_loss_gives_zero_gradients() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(&[1.0, -2.0]));
        let c = tape.constant(Tensor::scalar(3.5));
        let loss = tape.sum(c);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).data(), &[0.0, 0.0]);
    }

    #[test]
    fn square_gradient_matches_finite_difference() {
        let oracle = central_difference(|x| x * x, 3.0, 1e-4);
        assert!((oracle - 6.0).abs() < 1e-8);

        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.square(x);
        let grads = tape.backward(y).unwrap();
        assert!((grads.wrt(x).item() - oracle).abs() < 1e-8);
    }

    #[test]
    fn bce_gradient_at_zero_logit() {
        let bce = |l: f64| softplus(l) - l;
        let oracle = central_difference(bce, 0.0, 1e-4);
        assert!((oracle + 0.5).abs() < 1e-8);

        let mut tape = Tape::new();
        let l = tape.leaf(Tensor::scalar(0.0));
        let loss = tape.bce_with_logits(l, Tensor::scalar(1.0));
        let grads = tape.backward(loss).unwrap();
        assert!((grads.wrt(l).item() - oracle).abs() < 1e-8);
        assert_eq!(grads.wrt(l).item(), -0.5);
    }

    #[test]
    fn non_scalar_loss_is_a_contract_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(&[1.0, 2.0]));
        let y = tape.square(x);
        assert!(matches!(tape.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn non_finite_values_name_the_op() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(-1.0));
        let y = tape.ln(x);
        let s = tape.sum(y);
        match tape.backward(s) {
            Err(Error::Numeric { op }) => assert_eq!(op, "ln"),
            other => panic!("expected numeric error, got {:?}", other.err()),
        }
    }

    #[test]
    fn shared_inputs_accumulate() {
        // y = x * x + x  => dy/dx = 2x + 1
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let xx = tape.mul(x, x);
        let y = tape.add(xx, x);
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.wrt(x).item(), 5.0);
    }

    #[test]
    fn kl_is_exactly_zero_at_prior() {
        let mut tape = Tape::new();
        let mu = tape.leaf(Tensor::zeros(3, 2));
        let lv = tape.leaf(Tensor::zeros(3, 2));
        let kl = tape.kl_std_normal(mu, lv);
        assert_eq!(tape.value(kl).data(), &[0.0, 0.0, 0.0]);
    }
}
