//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation as it executes. Node ids grow
//! monotonically, so creation order is a valid topological order and
//! [`Graph::backward`] is a single reverse sweep.
//!
//! Gradients accumulate: calling `backward` twice without
//! [`Graph::zero_grad`] in between sums both contributions into the leaves.

use alloc::borrow::Cow;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::{gemm, MatRef, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
    Log,
    Exp,
    /// `ln(1 + e^x)`, evaluated without overflow.
    Softplus,
    Abs,
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Relu => "relu",
            Unary::LeakyRelu(_) => "leaky_relu",
            Unary::Sigmoid => "sigmoid",
            Unary::Tanh => "tanh",
            Unary::Log => "log",
            Unary::Exp => "exp",
            Unary::Softplus => "softplus",
            Unary::Abs => "abs",
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Unary::LeakyRelu(a) => {
                if x > 0.0 {
                    x
                } else if x < 0.0 {
                    a * x
                } else {
                    0.0
                }
            }
            Unary::Sigmoid => sigmoid(x),
            Unary::Tanh => libm::tanh(x),
            Unary::Log => libm::log(x),
            Unary::Exp => libm::exp(x),
            Unary::Softplus => softplus(x),
            Unary::Abs => libm::fabs(x),
        }
    }

    /// Derivative at `x`, given `y = apply(x)`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::LeakyRelu(a) => {
                if x > 0.0 {
                    1.0
                } else {
                    a
                }
            }
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Tanh => 1.0 - y * y,
            Unary::Log => 1.0 / x,
            Unary::Exp => y,
            Unary::Softplus => sigmoid(x),
            Unary::Abs => {
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
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `x · wᵀ + b`
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    /// `b` is either the same shape as `a` or a row vector broadcast over rows.
    Binary {
        kind: Binary,
        a: Var,
        b: Var,
        broadcast: bool,
    },
    Scale(Var, f64),
    Offset(Var),
    Unary(Var, Unary),
    Dropout {
        input: Var,
        mask: Vec<f64>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Pick {
        input: Var,
        index: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    requires_grad: bool,
    /// Accumulated gradient; only kept for leaves.
    grad: Option<Vec<f64>>,
}

/// A recorded computation. Parameters may be borrowed for the graph's
/// lifetime `'p` so large weight matrices are never copied.
pub struct Graph<'p> {
    nodes: Vec<Node<'p>>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'p, Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Owned input. `requires_grad` marks it as a differentiation target.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, requires_grad)
    }

    /// Constant: never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Borrowed input, typically a model parameter.
    pub fn param(&mut self, value: &'p Tensor, requires_grad: bool) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if `backward` reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        let node = &mut self.nodes[v.0];
        let shape = node.value.shape().to_vec();
        node.grad
            .take()
            .map(|g| Tensor::new(shape, g).expect("gradient shape matches value"))
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Matrix product of two 2-D tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::Shape {
                op: "matmul",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            MatRef::new(ta.data(), m, k),
            MatRef::new(tb.data(), k, n),
            &mut out,
            0.0,
        );
        let rg = self.needs(a) || self.needs(b);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(Cow::Owned(value), Op::MatMul(a, b), rg))
    }

    /// Dense layer `x · wᵀ + b` with `x: n×in`, `w: out×in`, `b: out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        if tx.shape().len() != 2 || tw.shape().len() != 2 || tx.shape()[1] != tw.shape()[1] {
            return Err(Error::Shape {
                op: "linear",
                left: tx.shape().to_vec(),
                right: tw.shape().to_vec(),
            });
        }
        let (n, fan_in, fan_out) = (tx.shape()[0], tx.shape()[1], tw.shape()[0]);
        if tb.len() != fan_out {
            return Err(Error::Shape {
                op: "linear bias",
                left: tw.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let mut out = Vec::with_capacity(n * fan_out);
        for _ in 0..n {
            out.extend_from_slice(tb.data());
        }
        gemm(
            MatRef::new(tx.data(), n, fan_in),
            MatRef::new(tw.data(), fan_out, fan_in).t(),
            &mut out,
            1.0,
        );
        let rg = self.needs(x) || self.needs(w) || self.needs(b);
        let value = Tensor::new(vec![n, fan_out], out)?;
        Ok(self.push(Cow::Owned(value), Op::Linear { x, w, b }, rg))
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let broadcast = if ta.shape() == tb.shape() {
            false
        } else if tb.shape().len() == 1 && ta.shape().len() == 2 && tb.len() == ta.cols() {
            true
        } else {
            return Err(Error::Shape {
                op: match kind {
                    Binary::Add => "add",
                    Binary::Sub => "sub",
                    Binary::Mul => "mul",
                },
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        };
        let c = tb.len();
        let f = |x: f64, y: f64| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
        };
        let data: Vec<f64> = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = if broadcast {
                    tb.data()[i % c]
                } else {
                    tb.data()[i]
                };
                f(x, y)
            })
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(
            Cow::Owned(value),
            Op::Binary {
                kind,
                a,
                b,
                broadcast,
            },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|x| x * factor);
        let rg = self.needs(a);
        self.push(Cow::Owned(value), Op::Scale(a, factor), rg)
    }

    /// `a + c` for a scalar constant `c`.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x + c);
        let rg = self.needs(a);
        self.push(Cow::Owned(value), Op::Offset(a), rg)
    }

    pub fn unary(&mut self, a: Var, kind: Unary) -> Result<Var> {
        let value = self.value(a).map(|x| kind.apply(x));
        if matches!(kind, Unary::Log | Unary::Exp) && !value.is_finite() {
            return Err(Error::NonFinite { op: kind.name() });
        }
        let rg = self.needs(a);
        Ok(self.push(Cow::Owned(value), Op::Unary(a, kind), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Relu).expect("relu is total")
    }

    pub fn leaky_relu(&mut self, a: Var, alpha: f64) -> Var {
        self.unary(a, Unary::LeakyRelu(alpha))
            .expect("leaky_relu is total")
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid).expect("sigmoid is total")
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Tanh).expect("tanh is total")
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Softplus).expect("softplus is total")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Log)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Exp)
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `p` and survivors are scaled by `1/(1-p)`; otherwise the
    /// identity (no node is recorded).
    pub fn dropout(&mut self, a: Var, p: f64, rng: &mut RngState, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(format!(
                "dropout probability {p} not in [0, 1)"
            )));
        }
        if !training || p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let src = self.value(a);
        let mask: Vec<f64> = (0..src.len())
            .map(|_| if rng.uniform() < p { 0.0 } else { keep })
            .collect();
        let data = src.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let value = Tensor::new(src.shape().to_vec(), data)?;
        let rg = self.needs(a);
        Ok(self.push(Cow::Owned(value), Op::Dropout { input: a, mask }, rg))
    }

    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let (n, c) = (t.rows(), t.cols());
        if targets.len() != n {
            return Err(Error::Shape {
                op: "softmax_cross_entropy",
                left: t.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&y| y >= c) {
            return Err(Error::Index { index: bad, len: c });
        }
        let mut probs = vec![0.0; n * c];
        let mut loss = 0.0;
        for (i, &y) in targets.iter().enumerate() {
            let row = t.row(i);
            let p = &mut probs[i * c..(i + 1) * c];
            let lse = softmax_into(row, p);
            loss += lse - row[y];
        }
        let loss = if n == 0 { 0.0 } else { loss / n as f64 };
        let rg = self.needs(logits);
        Ok(self.push(
            Cow::Owned(Tensor::scalar(loss)),
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// `out[i] = a[i, index[i]]` for a 2-D `a`.
    pub fn pick(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let (n, c) = (t.rows(), t.cols());
        if index.len() != n {
            return Err(Error::Shape {
                op: "pick",
                left: t.shape().to_vec(),
                right: vec![index.len()],
            });
        }
        let mut out = Vec::with_capacity(n);
        for (i, &j) in index.iter().enumerate() {
            if j >= c {
                return Err(Error::Index { index: j, len: c });
            }
            out.push(t.data()[i * c + j]);
        }
        let rg = self.needs(a);
        Ok(self.push(
            Cow::Owned(Tensor::vector(out)),
            Op::Pick {
                input: a,
                index: index.to_vec(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.needs(a);
        self.push(Cow::Owned(Tensor::scalar(s)), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = if t.is_empty() {
            0.0
        } else {
            t.data().iter().sum::<f64>() / t.len() as f64
        };
        let rg = self.needs(a);
        self.push(Cow::Owned(Tensor::scalar(m)), Op::Mean(a), rg)
    }

    /// Accumulates `d loss / d leaf` into every leaf that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        if !self.needs(loss) {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[id] = Some(g);
                continue;
            }
            self.propagate(id, &g, &mut grads);
        }

        for (id, g) in grads.into_iter().enumerate() {
            let Some(g) = g else { continue };
            let node = &mut self.nodes[id];
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                let gm = MatRef::new(g, m, n);
                if self.needs(*a) {
                    let acc = slot(grads, *a, m * k);
                    gemm(gm, MatRef::new(tb.data(), k, n).t(), acc, 1.0);
                }
                if self.needs(*b) {
                    let acc = slot(grads, *b, k * n);
                    gemm(MatRef::new(ta.data(), m, k).t(), gm, acc, 1.0);
                }
            }
            Op::Linear { x, w, b } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (n, fan_in, fan_out) = (tx.shape()[0], tx.shape()[1], tw.shape()[0]);
                let gm = MatRef::new(g, n, fan_out);
                if self.needs(*x) {
                    let acc = slot(grads, *x, n * fan_in);
                    gemm(gm, MatRef::new(tw.data(), fan_out, fan_in), acc, 1.0);
                }
                if self.needs(*w) {
                    let acc = slot(grads, *w, fan_out * fan_in);
                    gemm(gm.t(), MatRef::new(tx.data(), n, fan_in), acc, 1.0);
                }
                if self.needs(*b) {
                    let acc = slot(grads, *b, fan_out);
                    for row in g.chunks_exact(fan_out) {
                        acc.iter_mut().zip(row).for_each(|(a, r)| *a += r);
                    }
                }
            }
            Op::Binary {
                kind,
                a,
                b,
                broadcast,
            } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let c = tb.len();
                let bidx = |i: usize| if *broadcast { i % c } else { i };
                if self.needs(*a) {
                    let acc = slot(grads, *a, ta.len());
                    for (i, gi) in g.iter().enumerate() {
                        acc[i] += match kind {
                            Binary::Add | Binary::Sub => *gi,
                            Binary::Mul => gi * tb.data()[bidx(i)],
                        };
                    }
                }
                if self.needs(*b) {
                    let acc = slot(grads, *b, c);
                    for (i, gi) in g.iter().enumerate() {
                        acc[bidx(i)] += match kind {
                            Binary::Add => *gi,
                            Binary::Sub => -gi,
                            Binary::Mul => gi * ta.data()[i],
                        };
                    }
                }
            }
            Op::Scale(a, factor) => {
                let acc = slot(grads, *a, g.len());
                acc.iter_mut().zip(g).for_each(|(x, gi)| *x += gi * factor);
            }
            Op::Offset(a) => {
                let acc = slot(grads, *a, g.len());
                acc.iter_mut().zip(g).for_each(|(x, gi)| *x += gi);
            }
            Op::Unary(a, kind) => {
                let input = self.value(*a).data();
                let output = node.value.data();
                let acc = slot(grads, *a, g.len());
                for i in 0..g.len() {
                    acc[i] += g[i] * kind.derivative(input[i], output[i]);
                }
            }
            Op::Dropout { input, mask } => {
                let acc = slot(grads, *input, g.len());
                for i in 0..g.len() {
                    acc[i] += g[i] * mask[i];
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let n = targets.len();
                if n == 0 {
                    return;
                }
                let c = probs.len() / n;
                let scale = g[0] / n as f64;
                let acc = slot(grads, *logits, n * c);
                for (i, &y) in targets.iter().enumerate() {
                    for j in 0..c {
                        let onehot = if j == y { 1.0 } else { 0.0 };
                        acc[i * c + j] += scale * (probs[i * c + j] - onehot);
                    }
                }
            }
            Op::Pick { input, index } => {
                let t = self.value(*input);
                let c = t.cols();
                let acc = slot(grads, *input, t.len());
                for (i, &j) in index.iter().enumerate() {
                    acc[i * c + j] += g[i];
                }
            }
            Op::Sum(a) => {
                let acc = slot(grads, *a, self.value(*a).len());
                acc.iter_mut().for_each(|x| *x += g[0]);
            }
            Op::Mean(a) => {
                let len = self.value(*a).len();
                if len == 0 {
                    return;
                }
                let acc = slot(grads, *a, len);
                let share = g[0] / len as f64;
                acc.iter_mut().for_each(|x| *x += share);
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

/// Writes `softmax(row)` into `out` and returns `logsumexp(row)`.
pub fn softmax_into(row: &[f64], out: &mut [f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = libm::exp(v - max);
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
    max + libm::log(total)
}

/// `∂F_class/∂x` for a model given as a graph-building closure.
///
/// `x` is fed as a single row; the closure must return a `1 × c` (or
/// length-`c`) logit node. Parameters captured by the closure should be
/// registered without `requires_grad`, so they are left untouched.
pub fn input_gradient<'p, F>(forward: F, x: &Tensor, class: usize) -> Result<Tensor>
where
    F: FnOnce(&mut Graph<'p>, Var) -> Result<Var>,
{
    let d = x.len();
    let grads = input_gradients(forward, &Tensor::matrix(1, d, x.data().to_vec())?, &[class])?;
    Tensor::new(x.shape().to_vec(), grads.into_data())
}

/// Row-wise input gradients for a batch: row `i` of the result is
/// `∂F_{classes[i]}(x_i)/∂x_i`. Rows do not interact in a dense forward
/// pass, so one backward of the summed picked logits yields all of them.
pub fn input_gradients<'p, F>(forward: F, xs: &Tensor, classes: &[usize]) -> Result<Tensor>
where
    F: FnOnce(&mut Graph<'p>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.leaf(xs.clone(), true);
    let logits = forward(&mut g, x)?;
    let rows = xs.rows();
    let logits_t = g.value(logits);
    if logits_t.len() != rows * logits_t.cols() || logits_t.rows() != rows {
        return Err(Error::Shape {
            op: "input_gradient",
            left: xs.shape().to_vec(),
            right: logits_t.shape().to_vec(),
        });
    }
    let picked = g.pick(logits, classes)?;
    let total = g.sum(picked);
    g.backward(total)?;
    Ok(g.take_grad(x).unwrap_or_else(|| Tensor::zeros(xs.shape())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut g = Graph::new();
        let i = g.constant(Tensor::identity(2));
        let m = g.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let out = g.matmul(i, m).unwrap();
        assert_eq!(g.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);

        let b = g.constant(Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap());
        let out = g.matmul(m, b).unwrap();
        assert_eq!(g.value(out).shape(), &[2, 1]);
        assert_eq!(g.value(out).data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        match g.matmul(a, b) {
            Err(Error::Shape { left, right, .. }) => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2, 3]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn leaky_relu_and_relu() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let y = g.leaky_relu(x, 0.2);
        assert_eq!(g.value(y).data(), &[-0.2, 0.0, 2.0]);
        let r = g.relu(x);
        let l0 = g.leaky_relu(x, 0.0);
        assert_eq!(g.value(r).data(), g.value(l0).data());
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![0.0]), true);
        let s = g.sigmoid(x);
        let l = g.sum(s);
        g.backward(l).unwrap();
        assert!(close(g.grad(x).unwrap()[0], 0.25, 1e-15));
    }

    #[test]
    fn log_of_zero_reports_non_finite() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![0.0, 1.0]));
        assert_eq!(g.log(x).unwrap_err(), Error::NonFinite { op: "log" });
        let big = g.constant(Tensor::vector(vec![1000.0]));
        assert_eq!(g.exp(big).unwrap_err(), Error::NonFinite { op: "exp" });
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![3.0]), true);
        let sq = g.mul(x, x).unwrap();
        let l = g.sum(sq);
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn backward_accumulates_until_zeroed() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![3.0]), true);
        let sq = g.mul(x, x).unwrap();
        let l = g.sum(sq);
        g.backward(l).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[12.0]);
        g.zero_grad();
        assert!(g.grad(x).is_none());
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn constant_loss_leaves_no_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0]), true);
        let c = g.constant(Tensor::scalar(4.0));
        g.backward(c).unwrap();
        assert!(g.grad(x).map_or(true, |gr| gr.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0]), true);
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn cross_entropy_uniform_and_saturated() {
        let mut g = Graph::new();
        let l = g.constant(Tensor::zeros(&[1, 10]));
        let ce = g.softmax_cross_entropy(l, &[3]).unwrap();
        assert!(close(g.value(ce).data()[0], 10f64.ln(), 1e-12));

        let mut row = vec![0.0; 10];
        row[2] = 50.0;
        let l = g.constant(Tensor::matrix(1, 10, row).unwrap());
        let ce = g.softmax_cross_entropy(l, &[2]).unwrap();
        assert!(g.value(ce).data()[0] < 1e-9);
        assert!(g.value(ce).data()[0] >= 0.0);
    }

    #[test]
    fn cross_entropy_target_out_of_range() {
        let mut g = Graph::new();
        let l = g.constant(Tensor::zeros(&[2, 3]));
        assert_eq!(
            g.softmax_cross_entropy(l, &[0, 3]).unwrap_err(),
            Error::Index { index: 3, len: 3 }
        );
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = RngState::new(1);
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![1.0, -2.0, 3.0]));
        let y = g.dropout(x, 0.0, &mut rng, true).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
        let y = g.dropout(x, 0.7, &mut rng, false).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
        assert!(matches!(
            g.dropout(x, 1.0, &mut rng, true),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn dropout_masks_gradient() {
        let mut rng = RngState::new(5);
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0; 64]), true);
        let y = g.dropout(x, 0.5, &mut rng, true).unwrap();
        let l = g.sum(y);
        g.backward(l).unwrap();
        let out = g.value(y).data().to_vec();
        let grad = g.grad(x).unwrap();
        for (o, gr) in out.iter().zip(grad) {
            assert_eq!(o, gr);
        }
    }

    #[test]
    fn dropout_is_deterministic_per_seed() {
        let run = |seed| {
            let mut rng = RngState::new(seed);
            let mut g = Graph::new();
            let x = g.constant(Tensor::vector(vec![1.0; 256]));
            let y = g.dropout(x, 0.3, &mut rng, true).unwrap();
            g.value(y).data().to_vec()
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }

    #[test]
    fn broadcast_bias_add() {
        let mut g = Graph::new();
        let a = g.leaf(
            Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            true,
        );
        let b = g.leaf(Tensor::vector(vec![10.0, 20.0]), true);
        let y = g.add(a, b).unwrap();
        assert_eq!(g.value(y).data(), &[11.0, 22.0, 13.0, 24.0]);
        let l = g.sum(y);
        g.backward(l).unwrap();
        assert_eq!(g.grad(b).unwrap(), &[2.0, 2.0]);
        assert_eq!(g.grad(a).unwrap(), &[1.0; 4]);
    }

    #[test]
    fn input_gradient_of_linear_model_is_weight_row() {
        let w = Tensor::matrix(3, 2, vec![1.0, -2.0, 0.5, 4.0, -3.0, 7.0]).unwrap();
        let b = Tensor::vector(vec![0.1, 0.2, 0.3]);
        let x = Tensor::vector(vec![0.3, -0.9]);
        for class in 0..3 {
            let grad = input_gradient(
                |g, x| {
                    let wv = g.param(&w, false);
                    let bv = g.param(&b, false);
                    g.linear(x, wv, bv)
                },
                &x,
                class,
            )
            .unwrap();
            assert_eq!(grad.data(), w.row(class));
        }
    }

    #[test]
    fn input_gradient_class_out_of_range() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let err = input_gradient(|_, x| Ok(x), &x, 2).unwrap_err();
        assert_eq!(err, Error::Index { index: 2, len: 2 });
    }

    #[test]
    fn input_gradient_of_constant_is_zero() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let grad = input_gradient(
            |g, x| {
                let z = g.scale(x, 0.0);
                Ok(g.offset(z, 4.0))
            },
            &x,
            1,
        )
        .unwrap();
        assert_eq!(grad.data(), &[0.0, 0.0]);
    }
}
