//! Output-similar neighbourhoods.
//!
//! A candidate `x̃` is similar to an anchor `x` when the classifier assigns
//! it the same class `y` and its prediction logit stays within `delta` of
//! the anchor's, `|F_y(x) - F_y(x̃)| <= delta`. An optional input-space bound
//! `‖x̃ - x‖₂ <= rho` can be added; it is off by default.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ModelParams, Prediction};
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Default logit-distance bound.
pub const DEFAULT_DELTA: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilarityConfig {
    /// Bound on `|F_y(x) - F_y(x̃)|`.
    pub delta: f64,
    /// Optional bound on `‖x̃ - x‖₂`; `None` means unbounded.
    pub rho: Option<f64>,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self {
            delta: DEFAULT_DELTA,
            rho: None,
        }
    }
}

impl SimilarityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(Error::Parameter(format!(
                "delta must be positive, got {}",
                self.delta
            )));
        }
        if let Some(rho) = self.rho {
            if !(rho > 0.0) {
                return Err(Error::Parameter(format!("rho must be positive, got {rho}")));
            }
        }
        Ok(())
    }

    /// Checks one candidate against every predicate.
    pub fn accepts(&self, anchor: &Prediction, candidate: &Prediction, l2: f64) -> bool {
        candidate.class == anchor.class
            && libm::fabs(anchor.logit - candidate.logits[anchor.class]) <= self.delta
            && self.rho.map_or(true, |rho| l2 <= rho)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborhoodSource {
    Gan,
    NoiseUniform,
    NoiseNormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarSample {
    pub input: Vec<f64>,
    pub l2: f64,
    pub linf: f64,
    /// `|F_y(x) - F_y(x̃)|`.
    pub logit_distance: f64,
}

/// Accepted neighbours of an anchor, in candidate order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarSet {
    pub anchor: Vec<f64>,
    pub anchor_prediction: Prediction,
    pub samples: Vec<SimilarSample>,
    pub rejected: usize,
    pub source: NeighborhoodSource,
}

impl SimilarSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn inputs(&self) -> impl Iterator<Item = &[f64]> {
        self.samples.iter().map(|s| s.input.as_slice())
    }

    /// Keeps the first `n` samples.
    pub fn truncate(&mut self, n: usize) {
        self.samples.truncate(n);
    }

    /// Counts of accepted logit distances per tenth of `[0, delta]`.
    pub fn logit_deciles(&self, delta: f64) -> [usize; 10] {
        let mut bins = [0usize; 10];
        for s in &self.samples {
            let b = (s.logit_distance / delta * 10.0) as usize;
            bins[b.min(9)] += 1;
        }
        bins
    }
}

pub(crate) fn distances(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut sq = 0.0;
    let mut linf: f64 = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        sq += d * d;
        linf = linf.max(libm::fabs(d));
    }
    (libm::sqrt(sq), linf)
}

/// Keeps the candidates (rows of `candidates`) that are similar to `anchor`.
pub fn filter_similar(
    candidates: &Tensor,
    model: &ModelParams,
    anchor: &[f64],
    config: &SimilarityConfig,
    source: NeighborhoodSource,
) -> Result<SimilarSet> {
    config.validate()?;
    let anchor_prediction = model.predict(anchor)?;
    let mut set = SimilarSet {
        anchor: anchor.to_vec(),
        anchor_prediction,
        samples: Vec::new(),
        rejected: 0,
        source,
    };
    if candidates.is_empty() {
        return Ok(set);
    }
    if candidates.cols() != anchor.len() {
        return Err(Error::Shape {
            op: "filter_similar",
            left: alloc::vec![anchor.len()],
            right: candidates.shape().to_vec(),
        });
    }
    let predictions = model.predict_batch(candidates)?;
    for (i, p) in predictions.iter().enumerate() {
        let input = candidates.row(i);
        let (l2, linf) = distances(input, anchor);
        if config.accepts(&set.anchor_prediction, p, l2) {
            set.samples.push(SimilarSample {
                input: input.to_vec(),
                l2,
                linf,
                logit_distance: libm::fabs(
                    set.anchor_prediction.logit - p.logits[set.anchor_prediction.class],
                ),
            });
        } else {
            set.rejected += 1;
        }
    }
    Ok(set)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    /// Additive `U(-half_width, half_width)` per pixel.
    Uniform { half_width: f64 },
    /// Additive `N(0, std²)` per pixel.
    Normal { std: f64 },
}

impl NoiseKind {
    pub const DEFAULT_UNIFORM: NoiseKind = NoiseKind::Uniform { half_width: 0.05 };
    pub const DEFAULT_NORMAL: NoiseKind = NoiseKind::Normal { std: 0.03 };

    fn source(self) -> NeighborhoodSource {
        match self {
            NoiseKind::Uniform { .. } => NeighborhoodSource::NoiseUniform,
            NoiseKind::Normal { .. } => NeighborhoodSource::NoiseNormal,
        }
    }
}

/// Result of [`noise_neighborhood`].
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseNeighborhood {
    pub set: SimilarSet,
    /// Fraction of all candidates (before filtering) whose predicted class
    /// differs from the anchor's.
    pub misclassification_rate: f64,
}

/// Draws `n` candidates `clamp(x + noise, 0, 1)` and filters them.
pub fn noise_neighborhood(
    x: &[f64],
    kind: NoiseKind,
    n: usize,
    model: &ModelParams,
    config: &SimilarityConfig,
    rng: &mut RngState,
) -> Result<NoiseNeighborhood> {
    let scale = match kind {
        NoiseKind::Uniform { half_width } => half_width,
        NoiseKind::Normal { std } => std,
    };
    if !(scale >= 0.0) {
        return Err(Error::Parameter(format!(
            "noise scale must be non-negative, got {scale}"
        )));
    }
    let d = x.len();
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        for &v in x {
            let e = match kind {
                NoiseKind::Uniform { half_width } => rng.uniform_range(-half_width, half_width),
                NoiseKind::Normal { std } => rng.normal(0.0, std),
            };
            data.push((v + e).clamp(0.0, 1.0));
        }
    }
    let candidates = Tensor::matrix(n, d, data)?;
    let anchor = model.predict(x)?;
    let flipped = if n == 0 {
        0
    } else {
        model
            .predict_batch(&candidates)?
            .iter()
            .filter(|p| p.class != anchor.class)
            .count()
    };
    let set = filter_similar(&candidates, model, x, config, kind.source())?;
    Ok(NoiseNeighborhood {
        set,
        misclassification_rate: if n == 0 {
            0.0
        } else {
            flipped as f64 / n as f64
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, DenseNetSpec, Layer};

    /// logits = [x0 - x1, x1 - x0]
    fn two_class_linear() -> ModelParams {
        ModelParams::from_layers(
            DenseNetSpec::uniform(
                alloc::vec![2, 2],
                Activation::Identity,
                0.0,
                Activation::Identity,
            ),
            alloc::vec![Layer {
                weight: Tensor::matrix(2, 2, alloc::vec![1.0, -1.0, -1.0, 1.0]).unwrap(),
                bias: Tensor::vector(alloc::vec![0.0, 0.0]),
            }],
        )
        .unwrap()
    }

    #[test]
    fn anchor_is_similar_to_itself() {
        let m = two_class_linear();
        let x = [0.8, 0.2];
        let c = Tensor::matrix(1, 2, x.to_vec()).unwrap();
        let set = filter_similar(
            &c,
            &m,
            &x,
            &SimilarityConfig::default(),
            NeighborhoodSource::Gan,
        )
        .unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.samples[0].l2, 0.0);
        assert_eq!(set.samples[0].logit_distance, 0.0);
        assert_eq!(set.rejected, 0);
    }

    #[test]
    fn default_delta_is_five() {
        assert_eq!(SimilarityConfig::default().delta, 5.0);
        assert_eq!(SimilarityConfig::default().rho, None);
    }

    #[test]
    fn class_flip_and_far_logit_rejected_order_kept() {
        // anchor logit F_0 = 0.6
        let m = two_class_linear();
        let x = [0.8, 0.2];
        let cands = Tensor::from_rows(&[
            [0.7, 0.3],  // F_0 = 0.4, kept
            [0.2, 0.8],  // class 1, rejected
            [0.9, 0.1],  // F_0 = 0.8, kept
            [0.95, 0.0], // F_0 = 0.95, |0.35| > 0.3: rejected
        ])
        .unwrap();
        let cfg = SimilarityConfig {
            delta: 0.3,
            rho: None,
        };
        let set = filter_similar(&cands, &m, &x, &cfg, NeighborhoodSource::Gan).unwrap();
        assert_eq!(set.rejected, 2);
        assert_eq!(set.samples.len(), 2);
        assert_eq!(set.samples[0].input, alloc::vec![0.7, 0.3]);
        assert_eq!(set.samples[1].input, alloc::vec![0.9, 0.1]);
        assert!((set.samples[0].logit_distance - 0.2).abs() < 1e-12);
    }

    #[test]
    fn rho_bounds_input_distance() {
        let m = two_class_linear();
        let x = [0.8, 0.2];
        let cands = Tensor::from_rows(&[[0.8, 0.25], [1.0, 0.2]]).unwrap();
        let cfg = SimilarityConfig {
            delta: 5.0,
            rho: Some(0.1),
        };
        let set = filter_similar(&cands, &m, &x, &cfg, NeighborhoodSource::Gan).unwrap();
        assert_eq!(set.len(), 1);
        assert!(SimilarityConfig {
            delta: 1.0,
            rho: Some(0.0)
        }
        .validate()
        .is_err());
        assert!(SimilarityConfig {
            delta: 0.0,
            rho: None
        }
        .validate()
        .is_err());
    }

    #[test]
    fn zero_noise_reproduces_anchor() {
        let m = two_class_linear();
        let x = [0.8, 0.2];
        let out = noise_neighborhood(
            &x,
            NoiseKind::Normal { std: 0.0 },
            20,
            &m,
            &SimilarityConfig::default(),
            &mut RngState::new(0),
        )
        .unwrap();
        assert_eq!(out.misclassification_rate, 0.0);
        assert_eq!(out.set.len(), 20);
        assert!(out.set.samples.iter().all(|s| s.input == x));
        assert_eq!(out.set.source, NeighborhoodSource::NoiseNormal);
    }

    #[test]
    fn noise_candidates_clamped_and_counted() {
        let m = two_class_linear();
        let x = [0.52, 0.48];
        let out = noise_neighborhood(
            &x,
            NoiseKind::Uniform { half_width: 0.5 },
            400,
            &m,
            &SimilarityConfig::default(),
            &mut RngState::new(1),
        )
        .unwrap();
        assert!(out.misclassification_rate > 0.2 && out.misclassification_rate < 0.8);
        assert_eq!(out.set.len() + out.set.rejected, 400);
        assert!(out.set.inputs().flatten().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn deciles_bin_distances() {
        let m = two_class_linear();
        let set = filter_similar(
            &Tensor::from_rows(&[[0.8, 0.2]]).unwrap(),
            &m,
            &[0.8, 0.2],
            &SimilarityConfig::default(),
            NeighborhoodSource::Gan,
        )
        .unwrap();
        assert_eq!(set.logit_deciles(5.0)[0], 1);
    }
}
