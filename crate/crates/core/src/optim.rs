//! Adam with bias-corrected moment estimates.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Gradients, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment buffers, one per parameter tensor.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// One Adam update of every parameter of `params`.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut AdamState,
    config: &AdamConfig,
) -> Result<()> {
    let count = params.layers().len() * 2;
    if grads.tensors.len() != count {
        return Err(Error::Contract(format!(
            "expected {count} gradient tensors, got {}",
            grads.tensors.len()
        )));
    }
    if let Some(i) = grads.tensors.iter().position(Option::is_none) {
        return Err(Error::Contract(format!(
            "missing gradient for parameter tensor {i}"
        )));
    }
    if state.m.is_empty() {
        for t in params.tensors_mut() {
            state.m.push(vec![0.0; t.len()]);
            state.v.push(vec![0.0; t.len()]);
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - libm::pow(config.beta1, t as f64);
    let c2 = 1.0 - libm::pow(config.beta2, t as f64);
    for (i, p) in params.tensors_mut().enumerate() {
        let g = grads.tensors[i].as_ref().expect("checked above");
        if g.len() != p.len() {
            return Err(Error::Shape {
                op: "adam_step",
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (((w, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = config.beta1 * *mi + (1.0 - config.beta1) * gi;
            *vi = config.beta2 * *vi + (1.0 - config.beta2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *w -= config.learning_rate * m_hat / (libm::sqrt(v_hat) + config.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;
    use crate::nn::{Activation, DenseNetSpec, Layer};
    use crate::tensor::Tensor;

    fn single_layer(w: Vec<f64>) -> ModelParams {
        let n = w.len();
        ModelParams::from_layers(
            DenseNetSpec::uniform(vec![n, 1], Activation::Identity, 0.0, Activation::Identity),
            vec![Layer {
                weight: Tensor::matrix(1, n, w).unwrap(),
                bias: Tensor::vector(vec![0.0]),
            }],
        )
        .unwrap()
    }

    fn grads_of(g: Vec<f64>) -> Gradients {
        let n = g.len();
        Gradients {
            tensors: vec![
                Some(Tensor::matrix(1, n, g).unwrap()),
                Some(Tensor::vector(vec![0.0])),
            ],
        }
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = single_layer(vec![0.5, -1.5]);
        let before = p.clone();
        let g = grads_of(vec![0.0, 0.0]);
        adam_step(&mut p, &g, &mut AdamState::new(), &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = single_layer(vec![0.5, -1.5, 2.0]);
        let g = grads_of(vec![3.0, -0.2, 7.0]);
        let cfg = AdamConfig::default();
        adam_step(&mut p, &g, &mut AdamState::new(), &cfg).unwrap();
        let w = p.layers()[0].weight.data();
        assert!((w[0] - (0.5 - 1e-3)).abs() < 1e-9);
        assert!((w[1] - (-1.5 + 1e-3)).abs() < 1e-9);
        assert!((w[2] - (2.0 - 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn missing_gradient_is_contract_error() {
        let mut p = single_layer(vec![1.0]);
        let g = Gradients {
            tensors: vec![None, Some(Tensor::vector(vec![0.0]))],
        };
        assert!(matches!(
            adam_step(&mut p, &g, &mut AdamState::new(), &AdamConfig::default()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn quadratic_bowl_converges() {
        let w0 = vec![1.0, -2.0, 0.5, 3.0];
        let norm0 = w0.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut p = single_layer(w0);
        let mut state = AdamState::new();
        let cfg = AdamConfig {
            learning_rate: 0.05,
            ..AdamConfig::default()
        };
        for _ in 0..200 {
            // f(w) = ||w||^2 via the autodiff graph
            let grads = {
                let mut g = Graph::new();
                let w = g.param(&p.layers()[0].weight, true);
                let sq = g.mul(w, w).unwrap();
                let loss = g.sum(sq);
                g.backward(loss).unwrap();
                let gw = g.take_grad(w).unwrap();
                Gradients {
                    tensors: vec![Some(gw), Some(Tensor::vector(vec![0.0]))],
                }
            };
            adam_step(&mut p, &grads, &mut state, &cfg).unwrap();
        }
        let norm = p.layers()[0]
            .weight
            .data()
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        assert!(norm < 0.1 * norm0, "norm {norm} vs {norm0}");
    }
}
