//! Feature attributions for dense networks.
//!
//! Every method explains the logit `F_y` of the predicted class `y` and
//! returns one signed score per input feature. The gradient-based methods
//! and DeepLift share one batched backward sweep over the layers that
//! differs only in the per-unit multiplier: the activation derivative for
//! gradients, the finite-difference ratio `Δa / Δz` for DeepLift.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, ModelParams};
use crate::rng::RngState;
use crate::tensor::{gemm, MatRef, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Saliency,
    InputXGradient,
    IntegratedGradients,
    #[serde(rename = "smoothgrad")]
    SmoothGrad,
    LrpEpsilon,
    DeepliftRescale,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Saliency,
        Method::InputXGradient,
        Method::IntegratedGradients,
        Method::SmoothGrad,
        Method::LrpEpsilon,
        Method::DeepliftRescale,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Method::Saliency => "saliency",
            Method::InputXGradient => "input_x_gradient",
            Method::IntegratedGradients => "integrated_gradients",
            Method::SmoothGrad => "smoothgrad",
            Method::LrpEpsilon => "lrp_epsilon",
            Method::DeepliftRescale => "deeplift_rescale",
        }
    }

    /// Whether the method draws random numbers.
    pub fn is_stochastic(self) -> bool {
        self == Method::SmoothGrad
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown attribution method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttributionConfig {
    /// Riemann steps for integrated gradients.
    pub ig_steps: usize,
    /// Integrated-gradients baseline; `None` is the all-zero (black) image.
    pub ig_baseline: Option<Vec<f64>>,
    pub sg_samples: usize,
    /// SmoothGrad noise std; `None` means `0.1 · (max(x) - min(x))`.
    pub sg_sigma: Option<f64>,
    pub lrp_epsilon: f64,
    /// DeepLift reference; `None` is the all-zero image.
    pub dl_baseline: Option<Vec<f64>>,
    /// Scale every attribution to unit ℓ2 norm (zero vectors stay zero).
    pub normalize: bool,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        Self {
            ig_steps: 64,
            ig_baseline: None,
            sg_samples: 32,
            sg_sigma: None,
            lrp_epsilon: 1e-6,
            dl_baseline: None,
            normalize: false,
        }
    }
}

impl AttributionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ig_steps == 0 || self.sg_samples == 0 {
            return Err(Error::Parameter(
                "ig_steps and sg_samples must be at least 1".into(),
            ));
        }
        if let Some(s) = self.sg_sigma {
            if !(s >= 0.0) {
                return Err(Error::Parameter(format!(
                    "sg_sigma must be non-negative, got {s}"
                )));
            }
        }
        if !(self.lrp_epsilon > 0.0) {
            return Err(Error::Parameter(format!(
                "lrp_epsilon must be positive, got {}",
                self.lrp_epsilon
            )));
        }
        Ok(())
    }

    fn baseline(b: &Option<Vec<f64>>, d: usize) -> Result<Vec<f64>> {
        match b {
            None => Ok(vec![0.0; d]),
            Some(v) if v.len() == d => Ok(v.clone()),
            Some(v) => Err(Error::Shape {
                op: "baseline",
                left: vec![d],
                right: vec![v.len()],
            }),
        }
    }
}

/// An attribution vector with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub values: Vec<f64>,
    pub method: Method,
    /// Caller-chosen identifier of the explained input.
    pub anchor_id: String,
    /// [`ModelParams::digest`] of the explained model.
    pub params_digest: String,
}

/// Per-layer pre-activations and layer inputs of a batch, each `n × width`.
struct Pass {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

fn forward_pass(model: &ModelParams, xs: &[f64], n: usize) -> Pass {
    let mut inputs = Vec::with_capacity(model.layers().len());
    let mut pre = Vec::with_capacity(model.layers().len());
    let mut h = xs.to_vec();
    for (i, layer) in model.layers().iter().enumerate() {
        let (fan_out, fan_in) = (layer.weight.shape()[0], layer.weight.shape()[1]);
        let mut z = Vec::with_capacity(n * fan_out);
        for _ in 0..n {
            z.extend_from_slice(layer.bias.data());
        }
        gemm(
            MatRef::new(&h, n, fan_in),
            MatRef::new(layer.weight.data(), fan_out, fan_in).t(),
            &mut z,
            1.0,
        );
        let act = model.spec().activation(i);
        let a = z.iter().map(|&v| act.apply(v)).collect();
        inputs.push(core::mem::replace(&mut h, a));
        pre.push(z);
    }
    Pass { inputs, pre }
}

fn one_hot(c: usize, ys: &[usize]) -> Vec<f64> {
    let mut delta = vec![0.0; ys.len() * c];
    for (row, &y) in ys.iter().enumerate() {
        delta[row * c + y] = 1.0;
    }
    delta
}

fn derivatives(model: &ModelParams, pass: &Pass) -> Vec<Vec<f64>> {
    pass.pre
        .iter()
        .enumerate()
        .map(|(i, z)| {
            let act = model.spec().activation(i);
            z.iter().map(|&v| act.derivative(v)).collect()
        })
        .collect()
}

/// Propagates the output-space rows `delta` (`n × c`) back to the input,
/// multiplying by `mults[i]` (`n × width_(i+1)`) at each layer's
/// nonlinearity.
fn backprop(model: &ModelParams, n: usize, mut delta: Vec<f64>, mults: &[Vec<f64>]) -> Vec<f64> {
    for (i, layer) in model.layers().iter().enumerate().rev() {
        let (fan_out, fan_in) = (layer.weight.shape()[0], layer.weight.shape()[1]);
        delta.iter_mut().zip(&mults[i]).for_each(|(d, m)| *d *= m);
        let mut next = vec![0.0; n * fan_in];
        gemm(
            MatRef::new(&delta, n, fan_out),
            MatRef::new(layer.weight.data(), fan_out, fan_in),
            &mut next,
            0.0,
        );
        delta = next;
    }
    delta
}

/// Rows of `∂F_(ys[r])/∂x` at each row of `xs` (`n × d`).
fn gradients(model: &ModelParams, xs: &[f64], n: usize, ys: &[usize]) -> Vec<f64> {
    let pass = forward_pass(model, xs, n);
    let c = model.spec().output_dim();
    backprop(model, n, one_hot(c, ys), &derivatives(model, &pass))
}

/// Logits of `x` and the gradient of `CE(softmax(F(x)), y)` with respect to
/// `x`.
pub(crate) fn cross_entropy_gradient(
    model: &ModelParams,
    x: &[f64],
    y: usize,
) -> (Vec<f64>, Vec<f64>) {
    let pass = forward_pass(model, x, 1);
    let logits = pass.pre.last().expect("at least one layer").clone();
    let mut upstream = vec![0.0; logits.len()];
    crate::autodiff::softmax_into(&logits, &mut upstream);
    upstream[y] -= 1.0;
    let grad = backprop(model, 1, upstream, &derivatives(model, &pass));
    (logits, grad)
}

/// Largest number of gradient rows evaluated in one sweep.
const CHUNK_ROWS: usize = 2048;

fn check_dim(model: &ModelParams, d: usize) -> Result<()> {
    if d != model.spec().input_dim() {
        return Err(Error::Shape {
            op: "attribution",
            left: vec![d],
            right: vec![model.spec().input_dim()],
        });
    }
    if model.spec().output_activation != Activation::Identity {
        return Err(Error::UnsupportedActivation(format!(
            "output activation {} (attributions explain raw logits)",
            model.spec().output_activation.name()
        )));
    }
    Ok(())
}

fn check_class(model: &ModelParams, xs: &Tensor, y: usize) -> Result<()> {
    let c = model.spec().output_dim();
    if y >= c {
        return Err(Error::Index { index: y, len: c });
    }
    for p in model.predict_batch(xs)? {
        if p.class != y {
            return Err(Error::ClassMismatch {
                requested: y,
                predicted: p.class,
            });
        }
    }
    Ok(())
}

fn as_rows(xs: &Tensor) -> Result<(usize, usize)> {
    match xs.shape() {
        [d] => Ok((1, *d)),
        [n, d] => Ok((*n, *d)),
        s => Err(Error::Shape {
            op: "attribution",
            left: s.to_vec(),
            right: vec![],
        }),
    }
}

/// Averages gradients at `k` points per row. `points(row, out)` fills the
/// `k × d` block of evaluation points for `row`.
fn averaged_gradients(
    model: &ModelParams,
    n: usize,
    d: usize,
    k: usize,
    y: usize,
    mut points: impl FnMut(usize, &mut [f64]),
) -> Vec<f64> {
    let mut out = vec![0.0; n * d];
    let rows_per_chunk = (CHUNK_ROWS / k).max(1);
    let mut start = 0;
    while start < n {
        let end = (start + rows_per_chunk).min(n);
        let m = (end - start) * k;
        let mut batch = vec![0.0; m * d];
        for (j, block) in batch.chunks_exact_mut(k * d).enumerate() {
            points(start + j, block);
        }
        let g = gradients(model, &batch, m, &vec![y; m]);
        for (j, block) in g.chunks_exact(k * d).enumerate() {
            let acc = &mut out[(start + j) * d..(start + j + 1) * d];
            for step in block.chunks_exact(d) {
                acc.iter_mut().zip(step).for_each(|(a, v)| *a += v);
            }
            acc.iter_mut().for_each(|a| *a /= k as f64);
        }
        start = end;
    }
    out
}

fn lrp_rows(model: &ModelParams, xs: &[f64], n: usize, y: usize, eps: f64) -> Result<Vec<f64>> {
    for (i, &a) in model.spec().hidden_activations.iter().enumerate() {
        if !a.is_rectifier() {
            return Err(Error::UnsupportedActivation(format!(
                "{} after layer {i} (epsilon rule needs relu-family units)",
                a.name()
            )));
        }
    }
    let pass = forward_pass(model, xs, n);
    let c = model.spec().output_dim();
    let last = pass.pre.len() - 1;
    let mut relevance = vec![0.0; n * c];
    for row in 0..n {
        relevance[row * c + y] = pass.pre[last][row * c + y];
    }
    for (i, layer) in model.layers().iter().enumerate().rev() {
        let (fan_out, fan_in) = (layer.weight.shape()[0], layer.weight.shape()[1]);
        for (r, &z) in relevance.iter_mut().zip(&pass.pre[i]) {
            let stab = if z >= 0.0 { eps } else { -eps };
            *r /= z + stab;
        }
        let mut spread = vec![0.0; n * fan_in];
        gemm(
            MatRef::new(&relevance, n, fan_out),
            MatRef::new(layer.weight.data(), fan_out, fan_in),
            &mut spread,
            0.0,
        );
        spread
            .iter_mut()
            .zip(&pass.inputs[i])
            .for_each(|(s, a)| *s *= a);
        relevance = spread;
    }
    Ok(relevance)
}

/// Differences below this use the reference gradient as multiplier.
pub const DEEPLIFT_MIN_DELTA: f64 = 1e-9;

fn deeplift_rows(
    model: &ModelParams,
    xs: &[f64],
    n: usize,
    d: usize,
    y: usize,
    reference: &[f64],
) -> Vec<f64> {
    let pass = forward_pass(model, xs, n);
    let ref_pass = forward_pass(model, reference, 1);
    let mults: Vec<Vec<f64>> = pass
        .pre
        .iter()
        .zip(&ref_pass.pre)
        .enumerate()
        .map(|(i, (z, zr))| {
            let act = model.spec().activation(i);
            let w = zr.len();
            z.iter()
                .enumerate()
                .map(|(k, &zx)| {
                    let r = zr[k % w];
                    let dz = zx - r;
                    if libm::fabs(dz) < DEEPLIFT_MIN_DELTA {
                        act.derivative(r)
                    } else {
                        (act.apply(zx) - act.apply(r)) / dz
                    }
                })
                .collect()
        })
        .collect();
    let c = model.spec().output_dim();
    let mut out = backprop(model, n, one_hot(c, &vec![y; n]), &mults);
    for (row, vals) in out.chunks_exact_mut(d).enumerate() {
        let x = &xs[row * d..(row + 1) * d];
        vals.iter_mut()
            .zip(x.iter().zip(reference))
            .for_each(|(v, (a, b))| *v *= a - b);
    }
    out
}

fn sg_sigma(config: &AttributionConfig, x: &[f64]) -> f64 {
    config.sg_sigma.unwrap_or_else(|| {
        let (lo, hi) = x
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        if x.is_empty() {
            0.0
        } else {
            0.1 * (hi - lo)
        }
    })
}

/// Attributions for every row of `xs` (`n × d`, or a single `d` vector)
/// with respect to class `y`, which must be the predicted class of each
/// row. Returns an `n × d` tensor.
///
/// SmoothGrad draws its noise from `rng` row by row; the other methods
/// leave it untouched.
pub fn attribute_batch(
    model: &ModelParams,
    method: Method,
    xs: &Tensor,
    y: usize,
    config: &AttributionConfig,
    rng: &mut RngState,
) -> Result<Tensor> {
    config.validate()?;
    let (n, d) = as_rows(xs)?;
    check_dim(model, d)?;
    check_class(model, xs, y)?;
    let x = xs.data();
    let mut values = match method {
        Method::Saliency => averaged_gradients(model, n, d, 1, y, |r, out| {
            out.copy_from_slice(&x[r * d..(r + 1) * d])
        }),
        Method::InputXGradient => {
            let mut g = averaged_gradients(model, n, d, 1, y, |r, out| {
                out.copy_from_slice(&x[r * d..(r + 1) * d])
            });
            g.iter_mut().zip(x).for_each(|(g, v)| *g *= v);
            g
        }
        Method::IntegratedGradients => {
            // Right-endpoint Riemann sum: points x_b + (k/m)(x - x_b), k = 1..m.
            let base = AttributionConfig::baseline(&config.ig_baseline, d)?;
            let m = config.ig_steps;
            let mut g = averaged_gradients(model, n, d, m, y, |r, out| {
                let row = &x[r * d..(r + 1) * d];
                for (k, p) in out.chunks_exact_mut(d).enumerate() {
                    let t = (k + 1) as f64 / m as f64;
                    for ((p, &xi), &bi) in p.iter_mut().zip(row).zip(&base) {
                        *p = bi + t * (xi - bi);
                    }
                }
            });
            for (row, vals) in g.chunks_exact_mut(d).enumerate() {
                vals.iter_mut()
                    .zip(x[row * d..(row + 1) * d].iter().zip(&base))
                    .for_each(|(v, (a, b))| *v *= a - b);
            }
            g
        }
        Method::SmoothGrad => {
            // Noisy points are not re-classified.
            let k = config.sg_samples;
            averaged_gradients(model, n, d, k, y, |r, out| {
                let row = &x[r * d..(r + 1) * d];
                let sigma = sg_sigma(config, row);
                for p in out.chunks_exact_mut(d) {
                    for (p, &xi) in p.iter_mut().zip(row) {
                        *p = xi + sigma * rng.standard_normal();
                    }
                }
            })
        }
        Method::LrpEpsilon => lrp_rows(model, x, n, y, config.lrp_epsilon)?,
        Method::DeepliftRescale => {
            let reference = AttributionConfig::baseline(&config.dl_baseline, d)?;
            deeplift_rows(model, x, n, d, y, &reference)
        }
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: method.id() });
    }
    if config.normalize {
        for row in values.chunks_exact_mut(d) {
            let norm = libm::sqrt(row.iter().map(|v| v * v).sum::<f64>());
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
    }
    Tensor::matrix(n, d, values)
}

/// Attribution of a single input.
pub fn attribute_values(
    model: &ModelParams,
    method: Method,
    x: &[f64],
    y: usize,
    config: &AttributionConfig,
    rng: &mut RngState,
) -> Result<Vec<f64>> {
    let xs = Tensor::matrix(1, x.len(), x.to_vec())?;
    Ok(attribute_batch(model, method, &xs, y, config, rng)?.into_data())
}

pub fn saliency(model: &ModelParams, x: &[f64], y: usize) -> Result<Vec<f64>> {
    let config = AttributionConfig::default();
    attribute_values(
        model,
        Method::Saliency,
        x,
        y,
        &config,
        &mut RngState::new(0),
    )
}

pub fn input_x_gradient(model: &ModelParams, x: &[f64], y: usize) -> Result<Vec<f64>> {
    let config = AttributionConfig::default();
    attribute_values(
        model,
        Method::InputXGradient,
        x,
        y,
        &config,
        &mut RngState::new(0),
    )
}

pub fn integrated_gradients(
    model: &ModelParams,
    x: &[f64],
    y: usize,
    config: &AttributionConfig,
) -> Result<Vec<f64>> {
    attribute_values(
        model,
        Method::IntegratedGradients,
        x,
        y,
        config,
        &mut RngState::new(0),
    )
}

pub fn smoothgrad(
    model: &ModelParams,
    x: &[f64],
    y: usize,
    config: &AttributionConfig,
    rng: &mut RngState,
) -> Result<Vec<f64>> {
    attribute_values(model, Method::SmoothGrad, x, y, config, rng)
}

/// ε-rule relevance: `R_i = Σ_j a_i w_ij / (z_j + ε·sign(z_j)) · R_j`,
/// starting from `R = F_y(x)` at output `y` (`sign(0) = +1`).
pub fn lrp_epsilon(
    model: &ModelParams,
    x: &[f64],
    y: usize,
    config: &AttributionConfig,
) -> Result<Vec<f64>> {
    attribute_values(
        model,
        Method::LrpEpsilon,
        x,
        y,
        config,
        &mut RngState::new(0),
    )
}

/// Rescale rule against `config.dl_baseline`. Contributions sum to
/// `F_y(x) - F_y(x_b)`.
pub fn deeplift_rescale(
    model: &ModelParams,
    x: &[f64],
    y: usize,
    config: &AttributionConfig,
) -> Result<Vec<f64>> {
    attribute_values(
        model,
        Method::DeepliftRescale,
        x,
        y,
        config,
        &mut RngState::new(0),
    )
}

/// Computes attributions for one model, hashing its parameters once.
#[derive(Debug, Clone)]
pub struct Attributor<'m> {
    model: &'m ModelParams,
    config: AttributionConfig,
    digest: String,
}

impl<'m> Attributor<'m> {
    pub fn new(model: &'m ModelParams, config: AttributionConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            model,
            config,
            digest: model.digest(),
        })
    }

    pub fn model(&self) -> &'m ModelParams {
        self.model
    }

    pub fn config(&self) -> &AttributionConfig {
        &self.config
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn attribute(
        &self,
        method: Method,
        x: &[f64],
        y: usize,
        anchor_id: &str,
        rng: &mut RngState,
    ) -> Result<Attribution> {
        Ok(Attribution {
            values: attribute_values(self.model, method, x, y, &self.config, rng)?,
            method,
            anchor_id: anchor_id.to_string(),
            params_digest: self.digest.clone(),
        })
    }

    pub fn batch(
        &self,
        method: Method,
        xs: &Tensor,
        y: usize,
        rng: &mut RngState,
    ) -> Result<Tensor> {
        attribute_batch(self.model, method, xs, y, &self.config, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{DenseNetSpec, Layer};

    fn linear(w: Vec<f64>, c: usize, d: usize) -> ModelParams {
        ModelParams::from_layers(
            DenseNetSpec::uniform(vec![d, c], Activation::Identity, 0.0, Activation::Identity),
            vec![Layer {
                weight: Tensor::matrix(c, d, w).unwrap(),
                bias: Tensor::zeros(&[c]),
            }],
        )
        .unwrap()
    }

    #[test]
    fn method_ids_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.id().parse::<Method>().unwrap(), m);
            assert_eq!(
                serde_json::to_string(&m)
                    .unwrap_or_default()
                    .trim_matches('"'),
                m.id()
            );
        }
        assert!("guided_backprop".parse::<Method>().is_err());
    }

    #[test]
    fn linear_collapse() {
        let m = linear(vec![1.0, -2.0, 0.5, 0.3, 0.2, -0.1], 2, 3);
        let x = [0.9, 0.1, 0.4];
        let cfg = AttributionConfig {
            lrp_epsilon: 1e-13,
            ..AttributionConfig::default()
        };
        let mut rng = RngState::new(1);
        let y = m.predict(&x).unwrap().class;
        assert_eq!(y, 0);
        let wx = [0.9, -0.2, 0.2];
        for method in Method::ALL {
            let v = attribute_values(&m, method, &x, y, &cfg, &mut rng).unwrap();
            let want: &[f64] = match method {
                Method::Saliency | Method::SmoothGrad => &[1.0, -2.0, 0.5],
                _ => &wx,
            };
            for (a, b) in v.iter().zip(want) {
                assert!((a - b).abs() < 1e-9, "{method}: {v:?}");
            }
        }
    }

    #[test]
    fn class_mismatch_rejected() {
        let m = linear(vec![1.0, 0.0, 0.0, 1.0], 2, 2);
        let err = saliency(&m, &[0.9, 0.1], 1).unwrap_err();
        assert_eq!(
            err,
            Error::ClassMismatch {
                requested: 1,
                predicted: 0
            }
        );
        assert!(matches!(
            saliency(&m, &[0.9, 0.1], 5),
            Err(Error::Index { .. })
        ));
    }

    #[test]
    fn zero_input_gives_zero_for_product_methods() {
        let m = linear(vec![1.0, 2.0, -1.0, 0.5], 2, 2);
        let cfg = AttributionConfig::default();
        for method in [
            Method::InputXGradient,
            Method::IntegratedGradients,
            Method::LrpEpsilon,
            Method::DeepliftRescale,
        ] {
            let v =
                attribute_values(&m, method, &[0.0, 0.0], 0, &cfg, &mut RngState::new(0)).unwrap();
            assert_eq!(v, vec![0.0, 0.0], "{method}");
        }
    }

    #[test]
    fn smoothgrad_zero_sigma_is_saliency() {
        let spec = DenseNetSpec::classifier(vec![3, 5, 2]);
        let m = ModelParams::init(spec, &mut RngState::new(3)).unwrap();
        let x = [0.2, 0.7, 0.4];
        let y = m.predict(&x).unwrap().class;
        let cfg = AttributionConfig {
            sg_sigma: Some(0.0),
            ..AttributionConfig::default()
        };
        let s = saliency(&m, &x, y).unwrap();
        let sg = smoothgrad(&m, &x, y, &cfg, &mut RngState::new(9)).unwrap();
        for (a, b) in s.iter().zip(&sg) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_gives_unit_norm() {
        let m = linear(vec![3.0, 4.0, 0.0, 0.0], 2, 2);
        let cfg = AttributionConfig {
            normalize: true,
            ..AttributionConfig::default()
        };
        let v = attribute_values(
            &m,
            Method::Saliency,
            &[0.5, 0.5],
            0,
            &cfg,
            &mut RngState::new(0),
        )
        .unwrap();
        assert!((v[0] - 0.6).abs() < 1e-12 && (v[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn lrp_rejects_smooth_units() {
        let spec =
            DenseNetSpec::uniform(vec![2, 3, 2], Activation::Tanh, 0.0, Activation::Identity);
        let m = ModelParams::init(spec, &mut RngState::new(0)).unwrap();
        let x = [0.3, 0.6];
        let y = m.predict(&x).unwrap().class;
        assert!(matches!(
            lrp_epsilon(&m, &x, y, &AttributionConfig::default()),
            Err(Error::UnsupportedActivation(_))
        ));
        // the rescale rule handles any elementwise unit
        assert!(deeplift_rescale(&m, &x, y, &AttributionConfig::default()).is_ok());
    }
}
