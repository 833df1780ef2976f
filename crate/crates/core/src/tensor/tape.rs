use std::cell::RefCell;
use std::fmt;

use super::{gemm, MatRef, Tensor};
use crate::error::{shape_err, Error, Result};

/// A Wengert list recording every operation of one forward pass.
///
/// Values are immutable once recorded. Call [`Tape::reset`] between training
/// steps; the borrow checker guarantees no [`Var`] outlives the reset.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    Shift(usize),
    Relu(usize),
    Tanh(usize),
    TanhDeriv(usize),
    Sigmoid(usize),
    Square(usize),
    Sqrt(usize),
    Recip(usize),
    Exp(usize),
    Ln(usize),
    ExpandRows(usize),
    ExpandCols(usize),
    RowSums(usize),
    ColSums(usize),
    Sum(usize),
    GatherRows(usize, Vec<usize>),
    Concat(Vec<usize>),
    StackCols(Vec<usize>),
    Reshape(usize),
    FrobeniusSq(usize),
    SoftmaxXent(usize, Tensor),
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Gradients of a scalar loss with respect to every node that required one.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of its shape when the loss does not depend on it.
    pub fn wrt(&self, v: Var<'_>) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&v.shape()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drop every recorded node.
    pub fn reset(&mut self) {
        self.nodes.get_mut().clear();
    }

    /// A differentiable input (parameter or input whose gradient is wanted).
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A constant input; it never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// Flatten every input and concatenate into one `1×N` row.
    pub fn concat<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        if parts.is_empty() {
            return shape_err("concat of nothing");
        }
        let nodes = self.nodes.borrow();
        let mut data = Vec::new();
        for p in parts {
            data.extend_from_slice(nodes[p.id].value.data());
        }
        let rg = parts.iter().any(|p| nodes[p.id].requires_grad);
        drop(nodes);
        Ok(self.push(
            Tensor::row_vector(data),
            Op::Concat(parts.iter().map(|p| p.id).collect()),
            rg,
        ))
    }

    /// Place equally sized inputs side by side as the columns of a `d×k` matrix.
    pub fn stack_cols<'t>(&'t self, cols: &[Var<'t>]) -> Result<Var<'t>> {
        let nodes = self.nodes.borrow();
        let Some(first) = cols.first() else {
            return shape_err("stack_cols of nothing");
        };
        let d = nodes[first.id].value.len();
        if cols.iter().any(|c| nodes[c.id].value.len() != d) {
            return shape_err("stack_cols inputs differ in length");
        }
        let k = cols.len();
        let mut data = vec![0.0; d * k];
        for (j, c) in cols.iter().enumerate() {
            for (i, &v) in nodes[c.id].value.data().iter().enumerate() {
                data[i * k + j] = v;
            }
        }
        let rg = cols.iter().any(|c| nodes[c.id].requires_grad);
        drop(nodes);
        Ok(self.push(
            Tensor::matrix(d, k, data)?,
            Op::StackCols(cols.iter().map(|c| c.id).collect()),
            rg,
        ))
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn unary(&self, a: usize, op: impl FnOnce(usize) -> Op, f: impl Fn(f64) -> f64) -> Var<'_> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            (nodes[a].value.map(f), nodes[a].requires_grad)
        };
        self.push(value, op(a), rg)
    }

    fn binary(
        &self,
        a: usize,
        b: usize,
        name: &str,
        op: impl FnOnce(usize, usize) -> Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'_>> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a].value, &nodes[b].value);
            let value = if x.shape() == y.shape() {
                x.zip_with(y, &f)?
            } else if y.len() == 1 {
                let s = y.data()[0];
                x.map(|v| f(v, s))
            } else if x.len() == 1 {
                let s = x.data()[0];
                y.map(|v| f(s, v))
            } else {
                return shape_err(format!(
                    "{name}: cannot broadcast {:?} with {:?}",
                    x.shape(),
                    y.shape()
                ));
            };
            (value, nodes[a].requires_grad || nodes[b].requires_grad)
        };
        Ok(self.push(value, op(a, b), rg))
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return shape_err(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::ones(nodes[loss.id].value.shape()));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            let value = &node.value;
            let mut send = |to: usize, t: Tensor| {
                if nodes[to].requires_grad {
                    match &mut grads[to] {
                        Some(acc) => acc.add_assign(&t),
                        slot @ None => *slot = Some(t),
                    }
                }
            };
            let val = |i: usize| &nodes[i].value;
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (m, k) = val(*a).dims2();
                    let n = val(*b).cols();
                    if nodes[*a].requires_grad {
                        let mut ga = vec![0.0; m * k];
                        gemm(
                            m,
                            n,
                            k,
                            MatRef::new(g.data(), n, false),
                            MatRef::new(val(*b).data(), n, true),
                            &mut ga,
                        );
                        send(*a, Tensor::matrix(m, k, ga)?);
                    }
                    if nodes[*b].requires_grad {
                        let mut gb = vec![0.0; k * n];
                        gemm(
                            k,
                            m,
                            n,
                            MatRef::new(val(*a).data(), k, true),
                            MatRef::new(g.data(), n, false),
                            &mut gb,
                        );
                        send(*b, Tensor::matrix(k, n, gb)?);
                    }
                }
                Op::Transpose(a) => send(*a, g.transpose()?),
                Op::Add(a, b) => {
                    send(*a, unbroadcast(&g, val(*a)));
                    send(*b, unbroadcast(&g, val(*b)));
                }
                Op::Sub(a, b) => {
                    send(*a, unbroadcast(&g, val(*a)));
                    send(*b, unbroadcast(&g, val(*b)).scale(-1.0));
                }
                Op::Mul(a, b) => {
                    let (x, y) = (val(*a), val(*b));
                    if nodes[*a].requires_grad {
                        send(*a, unbroadcast(&zip_bcast(&g, y, |g, y| g * y), x));
                    }
                    if nodes[*b].requires_grad {
                        send(*b, unbroadcast(&zip_bcast(&g, x, |g, x| g * x), y));
                    }
                }
                Op::Div(a, b) => {
                    let (x, y) = (val(*a), val(*b));
                    if nodes[*a].requires_grad {
                        send(*a, unbroadcast(&zip_bcast(&g, y, |g, y| g / y), x));
                    }
                    if nodes[*b].requires_grad {
                        // d(x/y)/dy = -(x/y)/y = -out/y
                        let gy = zip_bcast(&g.zip_with(value, |g, o| -g * o)?, y, |t, y| t / y);
                        send(*b, unbroadcast(&gy, y));
                    }
                }
                Op::Scale(a, s) => send(*a, g.scale(*s)),
                Op::Shift(a) => send(*a, g),
                Op::Relu(a) => send(
                    *a,
                    g.zip_with(val(*a), |g, x| if x > 0.0 { g } else { 0.0 })?,
                ),
                Op::Tanh(a) => send(*a, g.zip_with(value, |g, y| g * (1.0 - y * y))?),
                Op::TanhDeriv(a) => {
                    // out = 1 - tanh²(x); out' = -2 tanh(x) · out
                    let gx = g
                        .zip_with(value, |g, o| g * o)?
                        .zip_with(val(*a), |t, x| -2.0 * x.tanh() * t)?;
                    send(*a, gx);
                }
                Op::Sigmoid(a) => send(*a, g.zip_with(value, |g, y| g * y * (1.0 - y))?),
                Op::Square(a) => send(*a, g.zip_with(val(*a), |g, x| 2.0 * g * x)?),
                Op::Sqrt(a) => send(*a, g.zip_with(value, |g, y| g / (2.0 * y))?),
                Op::Recip(a) => send(*a, g.zip_with(value, |g, y| -g * y * y)?),
                Op::Exp(a) => send(*a, g.zip_with(value, |g, y| g * y)?),
                Op::Ln(a) => send(*a, g.zip_with(val(*a), |g, x| g / x)?),
                Op::ExpandRows(a) => send(*a, col_sums(&g)),
                Op::ExpandCols(a) => send(*a, row_sums(&g)),
                Op::RowSums(a) => {
                    let (r, c) = val(*a).dims2();
                    let mut out = vec![0.0; r * c];
                    for i in 0..r {
                        out[i * c..(i + 1) * c].fill(g.data()[i]);
                    }
                    send(*a, Tensor::new(val(*a).shape().to_vec(), out)?);
                }
                Op::ColSums(a) => {
                    let (r, c) = val(*a).dims2();
                    let mut out = Vec::with_capacity(r * c);
                    for _ in 0..r {
                        out.extend_from_slice(g.data());
                    }
                    send(*a, Tensor::new(val(*a).shape().to_vec(), out)?);
                }
                Op::Sum(a) => send(*a, Tensor::full(val(*a).shape(), g.item())),
                Op::GatherRows(a, idx) => {
                    let src = val(*a);
                    let c = src.cols();
                    let mut out = Tensor::zeros(src.shape());
                    for (k, &i) in idx.iter().enumerate() {
                        let dst = &mut out.data_mut()[i * c..(i + 1) * c];
                        for (d, s) in dst.iter_mut().zip(&g.data()[k * c..(k + 1) * c]) {
                            *d += s;
                        }
                    }
                    send(*a, out);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = val(p).len();
                        let piece = Tensor::new(
                            val(p).shape().to_vec(),
                            g.data()[off..off + n].to_vec(),
                        )?;
                        off += n;
                        send(p, piece);
                    }
                }
                Op::StackCols(cols) => {
                    let k = cols.len();
                    for (j, &c) in cols.iter().enumerate() {
                        let d = val(c).len();
                        let col: Vec<f64> = (0..d).map(|i| g.data()[i * k + j]).collect();
                        send(c, Tensor::new(val(c).shape().to_vec(), col)?);
                    }
                }
                Op::Reshape(a) => send(*a, g.reshape(val(*a).shape())?),
                Op::FrobeniusSq(a) => {
                    let s = 2.0 * g.item();
                    send(*a, val(*a).scale(s));
                }
                Op::SoftmaxXent(a, targets) => {
                    let logits = val(*a);
                    let n = logits.rows() as f64;
                    let mut probs = softmax_rows(logits);
                    let s = g.item() / n;
                    for (p, t) in probs.data_mut().iter_mut().zip(targets.data()) {
                        *p = (*p - t) * s;
                    }
                    send(*a, probs);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value.data()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn same_tape(&self, other: Var<'t>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::Shape("operands live on different tapes".into()))
        }
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other)?;
        let (value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let value = nodes[self.id].value.matmul(&nodes[other.id].value)?;
            (
                value,
                nodes[self.id].requires_grad || nodes[other.id].requires_grad,
            )
        };
        Ok(self.tape.push(value, Op::MatMul(self.id, other.id), rg))
    }

    pub fn t(self) -> Result<Var<'t>> {
        let (value, rg) = {
            let nodes = self.tape.nodes.borrow();
            (nodes[self.id].value.transpose()?, nodes[self.id].requires_grad)
        };
        Ok(self.tape.push(value, Op::Transpose(self.id), rg))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other)?;
        self.tape.binary(self.id, other.id, "add", Op::Add, |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other)?;
        self.tape.binary(self.id, other.id, "sub", Op::Sub, |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other)?;
        self.tape.binary(self.id, other.id, "mul", Op::Mul, |a, b| a * b)
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other)?;
        self.tape.binary(self.id, other.id, "div", Op::Div, |a, b| a / b)
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        self.tape.unary(self.id, |a| Op::Scale(a, s), |v| v * s)
    }

    pub fn shift(self, s: f64) -> Var<'t> {
        self.tape.unary(self.id, Op::Shift, |v| v + s)
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn relu(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Relu, |v| v.max(0.0))
    }

    /// Indicator `x > 0`. Recorded as a constant: it carries no gradient.
    pub fn relu_mask(self) -> Var<'t> {
        let value = self.value().map(|v| if v > 0.0 { 1.0 } else { 0.0 });
        self.tape.constant(value)
    }

    pub fn tanh(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Tanh, f64::tanh)
    }

    /// `1 - tanh²(x)`, differentiable.
    pub fn tanh_deriv(self) -> Var<'t> {
        self.tape.unary(self.id, Op::TanhDeriv, |v| {
            let t = v.tanh();
            1.0 - t * t
        })
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Sigmoid, sigmoid)
    }

    pub fn square(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Square, |v| v * v)
    }

    pub fn sqrt(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Sqrt, f64::sqrt)
    }

    pub fn recip(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Recip, f64::recip)
    }

    pub fn exp(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Exp, f64::exp)
    }

    pub fn ln(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Ln, f64::ln)
    }

    /// Repeat a `1×w` row `n` times, giving `n×w`.
    pub fn expand_rows(self, n: usize) -> Result<Var<'t>> {
        let (value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let v = &nodes[self.id].value;
            if v.dims2().0 != 1 {
                return shape_err(format!("expand_rows needs a 1×w row, got {:?}", v.shape()));
            }
            let w = v.len();
            let mut out = Vec::with_capacity(n * w);
            for _ in 0..n {
                out.extend_from_slice(v.data());
            }
            (Tensor::matrix(n, w, out)?, nodes[self.id].requires_grad)
        };
        Ok(self.tape.push(value, Op::ExpandRows(self.id), rg))
    }

    /// Repeat an `n×1` column `w` times, giving `n×w`.
    pub fn expand_cols(self, w: usize) -> Result<Var<'t>> {
        let (value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let v = &nodes[self.id].value;
            if !v.is_matrix() || v.cols() != 1 {
                return shape_err(format!("expand_cols needs an n×1 column, got {:?}", v.shape()));
            }
            let n = v.rows();
            let mut out = Vec::with_capacity(n * w);
            for &x in v.data() {
                out.extend(std::iter::repeat_n(x, w));
            }
            (Tensor::matrix(n, w, out)?, nodes[self.id].requires_grad)
        };
        Ok(self.tape.push(value, Op::ExpandCols(self.id), rg))
    }

    /// Sum each row: `n×w → n×1`.
    pub fn row_sums(self) -> Var<'t> {
        let (value, rg) = {
            let nodes = self.tape.nodes.borrow();
            (row_sums(&nodes[self.id].value), nodes[self.id].requires_grad)
        };
        self.tape.push(value, Op::RowSums(self.id), rg)
    }

    /// Sum each column: `n×w → 1×w`.
    pub fn col_sums(self) -> Var<'t> {
        let (value, rg) = {
            let nodes = self.tape.nodes.borrow();
            (col_sums(&nodes[self.id].value), nodes[self.id].requires_grad)
        };
        self.tape.push(value, Op::ColSums(self.id), rg)
    }

    pub fn sum(self) -> Var<'t> {
        let (value, rg) = {
            let nodes = self.tape.nodes.borrow();
            (
                Tensor::scalar(nodes[self.id].value.sum()),
                nodes[self.id].requires_grad,
            )
        };
        self.tape.push(value, Op::Sum(self.id), rg)
    }

    pub fn gather_rows(self, idx: &[usize]) -> Result<Var<'t>> {
        let (value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let v = &nodes[self.id].value;
            let (r, c) = v.dims2();
            if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
                return shape_err(format!("gather_rows index {bad} out of {r} rows"));
            }
            let mut out = Vec::with_capacity(idx.len() * c);
            for &i in idx {
                out.extend_from_slice(&v.data()[i * c..(i + 1) * c]);
            }
            (Tensor::matrix(idx.len(), c, out)?, nodes[self.id].requires_grad)
        };
        Ok(self.tape.push(value, Op::GatherRows(self.id, idx.to_vec()), rg))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let (value, rg) = {
            let nodes = self.tape.nodes.borrow();
            (
                nodes[self.id].value.reshape(shape)?,
                nodes[self.id].requires_grad,
            )
        };
        Ok(self.tape.push(value, Op::Reshape(self.id), rg))
    }

    /// Sum of squared entries, as a scalar.
    pub fn frobenius_sq(self) -> Var<'t> {
        let (value, rg) = {
            let nodes = self.tape.nodes.borrow();
            (
                Tensor::scalar(nodes[self.id].value.frobenius_sq()),
                nodes[self.id].requires_grad,
            )
        };
        self.tape.push(value, Op::FrobeniusSq(self.id), rg)
    }

    /// Mean over rows of the cross-entropy between `softmax(self)` and `targets`.
    pub fn softmax_cross_entropy(self, targets: &Tensor) -> Result<Var<'t>> {
        let (value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let logits = &nodes[self.id].value;
            if logits.shape() != targets.shape() || !logits.is_matrix() {
                return shape_err(format!(
                    "softmax_cross_entropy: logits {:?} vs targets {:?}",
                    logits.shape(),
                    targets.shape()
                ));
            }
            let c = logits.cols();
            let mut loss = 0.0;
            for (row, t) in logits.data().chunks(c).zip(targets.data().chunks(c)) {
                let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
                loss += row.iter().zip(t).map(|(z, t)| t * (lse - z)).sum::<f64>();
            }
            (
                Tensor::scalar(loss / logits.rows().max(1) as f64),
                nodes[self.id].requires_grad,
            )
        };
        Ok(self
            .tape
            .push(value, Op::SoftmaxXent(self.id, targets.clone()), rg))
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_rows(logits: &Tensor) -> Tensor {
    let c = logits.cols();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(c) {
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    out
}

fn row_sums(t: &Tensor) -> Tensor {
    let (r, c) = t.dims2();
    let data = (0..r).map(|i| t.data()[i * c..(i + 1) * c].iter().sum()).collect();
    Tensor::col_vector(data)
}

fn col_sums(t: &Tensor) -> Tensor {
    let (r, c) = t.dims2();
    let mut out = vec![0.0; c];
    for i in 0..r {
        for (o, v) in out.iter_mut().zip(&t.data()[i * c..(i + 1) * c]) {
            *o += v;
        }
    }
    Tensor::row_vector(out)
}

/// Elementwise `f(g, y)` where `y` is either `g`-shaped or a single value.
fn zip_bcast(g: &Tensor, y: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if y.len() == 1 && g.len() != 1 {
        let s = y.data()[0];
        g.map(|v| f(v, s))
    } else if g.len() == 1 && y.len() != 1 {
        let s = g.data()[0];
        y.map(|v| f(s, v))
    } else {
        Tensor {
            shape: g.shape.clone(),
            data: g.data.iter().zip(&y.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }
}

/// Reduce an output-shaped gradient back to the operand's shape.
fn unbroadcast(g: &Tensor, operand: &Tensor) -> Tensor {
    if g.shape() == operand.shape() {
        g.clone()
    } else if operand.len() == 1 {
        Tensor::full(operand.shape(), g.sum())
    } else {
        // operand was the full-size side and g came from a scalar output
        Tensor::full(operand.shape(), g.item())
    }
}
