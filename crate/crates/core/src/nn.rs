//! Dense feed-forward networks.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Graph, Unary, Var};
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::{gemm, MatRef, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu { alpha: f64 },
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::LeakyRelu { .. } => "leaky_relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
        }
    }

    fn unary(self) -> Option<Unary> {
        match self {
            Activation::Identity => None,
            Activation::Relu => Some(Unary::Relu),
            Activation::LeakyRelu { alpha } => Some(Unary::LeakyRelu(alpha)),
            Activation::Sigmoid => Some(Unary::Sigmoid),
            Activation::Tanh => Some(Unary::Tanh),
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        self.unary().map_or(x, |u| u.apply(x))
    }

    /// Derivative at pre-activation `x`.
    pub fn derivative(self, x: f64) -> f64 {
        self.unary().map_or(1.0, |u| u.derivative(x, u.apply(x)))
    }

    /// Piecewise-linear through the origin; the relevance and
    /// difference-from-reference rules are only defined for these.
    pub fn is_rectifier(self) -> bool {
        matches!(
            self,
            Activation::Identity | Activation::Relu | Activation::LeakyRelu { .. }
        )
    }
}

/// Architecture of a dense network.
///
/// `widths[0]` is the input dimension and the last entry the output
/// dimension. Hidden layer `i` (the output of linear layer `i`, for
/// `i < widths.len() - 2`) is followed by `hidden_activations[i]` and then
/// dropout with probability `dropout[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNetSpec {
    pub widths: Vec<usize>,
    pub hidden_activations: Vec<Activation>,
    pub dropout: Vec<f64>,
    pub output_activation: Activation,
}

impl DenseNetSpec {
    /// Same activation and dropout on every hidden layer.
    pub fn uniform(
        widths: Vec<usize>,
        hidden: Activation,
        dropout: f64,
        output: Activation,
    ) -> Self {
        let hidden_layers = widths.len().saturating_sub(2);
        Self {
            widths,
            hidden_activations: vec![hidden; hidden_layers],
            dropout: vec![dropout; hidden_layers],
            output_activation: output,
        }
    }

    /// ReLU classifier emitting raw logits.
    pub fn classifier(widths: Vec<usize>) -> Self {
        Self::uniform(widths, Activation::Relu, 0.0, Activation::Identity)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::Parameter(format!(
                "a network needs at least input and output widths, got {:?}",
                self.widths
            )));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(Error::Parameter(format!("zero width in {:?}", self.widths)));
        }
        let hidden = self.widths.len() - 2;
        if self.hidden_activations.len() != hidden || self.dropout.len() != hidden {
            return Err(Error::Parameter(format!(
                "{hidden} hidden layers but {} activations and {} dropout rates",
                self.hidden_activations.len(),
                self.dropout.len()
            )));
        }
        if let Some(p) = self.dropout.iter().find(|p| !(0.0..1.0).contains(*p)) {
            return Err(Error::Parameter(format!(
                "dropout probability {p} not in [0, 1)"
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated spec")
    }

    pub fn layer_count(&self) -> usize {
        self.widths.len() - 1
    }

    /// Activation after linear layer `i`.
    pub fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layer_count() {
            self.output_activation
        } else {
            self.hidden_activations[layer]
        }
    }

    fn dropout_after(&self, layer: usize) -> f64 {
        if layer + 1 == self.layer_count() {
            0.0
        } else {
            self.dropout[layer]
        }
    }

    /// Human-readable summary, e.g. `dense 784-256-128-10 relu`.
    pub fn describe(&self) -> String {
        let mut s = String::from("dense ");
        for (i, w) in self.widths.iter().enumerate() {
            if i > 0 {
                s.push('-');
            }
            let _ = write!(s, "{w}");
        }
        if let Some(a) = self.hidden_activations.first() {
            let _ = write!(s, " {}", a.name());
        }
        if self.output_activation != Activation::Identity {
            let _ = write!(s, " out:{}", self.output_activation.name());
        }
        s
    }
}

/// Weights (`out × in`, row-major) and bias (`out`) of one dense layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    spec: DenseNetSpec,
    layers: Vec<Layer>,
}

/// Graph handles of a model's parameters, in layer order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<(Var, Var)>,
}

/// Parameter gradients, `[w0, b0, w1, b1, ...]`. `None` marks a parameter
/// the backward pass never reached.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub tensors: Vec<Option<Tensor>>,
}

/// Per-layer values of a single-input forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `inputs[i]` is the input of linear layer `i` (`inputs[0] = x`).
    pub inputs: Vec<Vec<f64>>,
    /// Pre-activation of layer `i`.
    pub pre: Vec<Vec<f64>>,
    /// Network output (after the output activation).
    pub output: Vec<f64>,
}

/// Classifier output for one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub logits: Vec<f64>,
    /// `argmax(logits)`, lowest index on ties.
    pub class: usize,
    /// `logits[class]`.
    pub logit: f64,
}

impl Prediction {
    pub fn from_logits(logits: Vec<f64>) -> Self {
        let class = argmax(&logits);
        let logit = logits[class];
        Self {
            logits,
            class,
            logit,
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(2 * bytes.len());
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// Hex SHA-256 over the little-endian bits of `values`.
pub fn values_digest(values: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_bits().to_le_bytes());
    }
    hex(&h.finalize())
}

/// Index of the maximum; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl ModelParams {
    /// Kaiming-uniform weights (`U(-b, b)`, `b = sqrt(6 / fan_in)`, so the
    /// variance is `2 / fan_in`) and zero biases.
    pub fn init(spec: DenseNetSpec, rng: &mut RngState) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = libm::sqrt(6.0 / fan_in as f64);
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.uniform_range(-bound, bound))
                    .collect();
                Layer {
                    weight: Tensor::matrix(fan_out, fan_in, data).expect("sized"),
                    bias: Tensor::zeros(&[fan_out]),
                }
            })
            .collect();
        Ok(Self { spec, layers })
    }

    pub fn from_layers(spec: DenseNetSpec, layers: Vec<Layer>) -> Result<Self> {
        spec.validate()?;
        if layers.len() != spec.layer_count() {
            return Err(Error::Parameter(format!(
                "spec has {} layers, got {}",
                spec.layer_count(),
                layers.len()
            )));
        }
        for (i, layer) in layers.iter().enumerate() {
            let (fan_in, fan_out) = (spec.widths[i], spec.widths[i + 1]);
            if layer.weight.shape() != [fan_out, fan_in] || layer.bias.shape() != [fan_out] {
                return Err(Error::Shape {
                    op: "from_layers",
                    left: vec![fan_out, fan_in],
                    right: layer.weight.shape().to_vec(),
                });
            }
            if !layer.weight.is_finite() || !layer.bias.is_finite() {
                return Err(Error::NonFinite { op: "from_layers" });
            }
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &DenseNetSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Parameter tensors in `[w0, b0, w1, b1, ...]` order.
    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    /// Hex SHA-256 over the widths and every parameter's little-endian bits.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for w in &self.spec.widths {
            h.update((*w as u64).to_le_bytes());
        }
        for layer in &self.layers {
            for v in layer.weight.data().iter().chain(layer.bias.data()) {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex(&h.finalize())
    }

    /// Registers every parameter in `g`.
    pub fn bind<'p>(&'p self, g: &mut Graph<'p>, trainable: bool) -> BoundParams {
        BoundParams {
            vars: self
                .layers
                .iter()
                .map(|l| (g.param(&l.weight, trainable), g.param(&l.bias, trainable)))
                .collect(),
        }
    }

    /// Records the forward pass of `x` (`n × d`) into `g`.
    pub fn forward_graph(
        &self,
        g: &mut Graph<'_>,
        bound: &BoundParams,
        x: Var,
        training: bool,
        rng: &mut RngState,
    ) -> Result<Var> {
        let d = g.value(x).cols();
        if d != self.spec.input_dim() {
            return Err(Error::Shape {
                op: "forward",
                left: g.value(x).shape().to_vec(),
                right: vec![self.spec.input_dim()],
            });
        }
        let mut h = x;
        for (i, &(w, b)) in bound.vars.iter().enumerate() {
            h = g.linear(h, w, b)?;
            if let Some(u) = self.spec.activation(i).unary() {
                h = g.unary(h, u)?;
            }
            let p = self.spec.dropout_after(i);
            if p > 0.0 {
                h = g.dropout(h, p, rng, training)?;
            }
        }
        Ok(h)
    }

    /// Forward pass of a batch `x: n × d`, returning `n × c` outputs.
    pub fn forward(&self, x: &Tensor, training: bool, rng: &mut RngState) -> Result<Tensor> {
        if !training {
            return self.eval(x);
        }
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let xv = g.constant(as_batch(x)?);
        let out = self.forward_graph(&mut g, &bound, xv, true, rng)?;
        Ok(g.value(out).clone())
    }

    /// Inference-mode forward pass without recording a graph. Accepts a
    /// single vector or an `n × d` batch; always returns `n × c`.
    pub fn eval(&self, x: &Tensor) -> Result<Tensor> {
        let x = as_batch(x)?;
        let n = x.rows();
        if x.cols() != self.spec.input_dim() {
            return Err(Error::Shape {
                op: "forward",
                left: x.shape().to_vec(),
                right: vec![self.spec.input_dim()],
            });
        }
        let mut h = x.into_data();
        for (i, layer) in self.layers.iter().enumerate() {
            let (fan_out, fan_in) = (layer.weight.shape()[0], layer.weight.shape()[1]);
            let mut out = Vec::with_capacity(n * fan_out);
            for _ in 0..n {
                out.extend_from_slice(layer.bias.data());
            }
            gemm(
                MatRef::new(&h, n, fan_in),
                MatRef::new(layer.weight.data(), fan_out, fan_in).t(),
                &mut out,
                1.0,
            );
            let act = self.spec.activation(i);
            if act != Activation::Identity {
                out.iter_mut().for_each(|v| *v = act.apply(*v));
            }
            h = out;
        }
        Tensor::matrix(n, self.spec.output_dim(), h)
    }

    /// Logits, predicted class and prediction logit for one input.
    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let out = self.eval(&Tensor::vector(x.to_vec()))?;
        Ok(Prediction::from_logits(out.into_data()))
    }

    /// Predictions for every row of a batch.
    pub fn predict_batch(&self, xs: &Tensor) -> Result<Vec<Prediction>> {
        let out = self.eval(xs)?;
        Ok((0..out.rows())
            .map(|i| Prediction::from_logits(out.row(i).to_vec()))
            .collect())
    }

    /// Layer-by-layer values for a single input (inference mode).
    pub fn trace(&self, x: &[f64]) -> Result<Trace> {
        if x.len() != self.spec.input_dim() {
            return Err(Error::Shape {
                op: "trace",
                left: vec![x.len()],
                right: vec![self.spec.input_dim()],
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let fan_in = layer.weight.shape()[1];
            let z: Vec<f64> = layer
                .weight
                .data()
                .chunks_exact(fan_in)
                .zip(layer.bias.data())
                .map(|(row, b)| row.iter().zip(&h).map(|(w, a)| w * a).sum::<f64>() + b)
                .collect();
            let act = self.spec.activation(i);
            let a = z.iter().map(|&v| act.apply(v)).collect();
            inputs.push(core::mem::replace(&mut h, a));
            pre.push(z);
        }
        Ok(Trace {
            inputs,
            pre,
            output: h,
        })
    }
}

impl BoundParams {
    /// Takes the accumulated gradients out of `g`.
    pub fn gradients(&self, g: &mut Graph<'_>) -> Gradients {
        Gradients {
            tensors: self
                .vars
                .iter()
                .flat_map(|&(w, b)| [w, b])
                .map(|v| g.take_grad(v))
                .collect(),
        }
    }
}

/// Promotes a 1-D tensor to a single-row matrix.
fn as_batch(x: &Tensor) -> Result<Tensor> {
    match x.shape().len() {
        1 => Tensor::matrix(1, x.len(), x.data().to_vec()),
        2 => Ok(x.clone()),
        _ => Err(Error::Shape {
            op: "forward",
            left: x.shape().to_vec(),
            right: vec![0, 0],
        }),
    }
}
