//! Supervised classifier training.
//!
//! The well- and badly-trained regimes share architecture and optimizer
//! settings and differ only in exposure: number of epochs and the fraction
//! of the training split that is used.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{argmax, DenseNetSpec, ModelParams};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::rng::RngState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Well,
    Bad,
}

impl Regime {
    pub const ALL: [Regime; 2] = [Regime::Well, Regime::Bad];

    pub fn label(self) -> &'static str {
        match self {
            Regime::Well => "well",
            Regime::Bad => "bad",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Fraction of the training split actually used, in `(0, 1]`.
    pub train_fraction: f64,
    pub regime: Regime,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::well()
    }
}

impl TrainConfig {
    pub fn well() -> Self {
        Self {
            epochs: 4,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            train_fraction: 1.0,
            regime: Regime::Well,
        }
    }

    /// Same optimizer settings, one epoch on 2% of the data.
    pub fn bad() -> Self {
        Self {
            epochs: 1,
            train_fraction: 0.02,
            regime: Regime::Bad,
            ..Self::well()
        }
    }

    pub fn for_regime(regime: Regime) -> Self {
        match regime {
            Regime::Well => Self::well(),
            Regime::Bad => Self::bad(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Parameter(
                "epochs and batch size must be at least 1".into(),
            ));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::Parameter(format!(
                "train fraction {} not in (0, 1]",
                self.train_fraction
            )));
        }
        if !(self.learning_rate > 0.0) || !(self.eps > 0.0) {
            return Err(Error::Parameter(
                "learning rate and eps must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedClassifier {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    /// Number of training examples actually used.
    pub examples_used: usize,
}

impl TrainedClassifier {
    pub fn final_test_accuracy(&self) -> Option<f64> {
        self.history.last().and_then(|r| r.test_accuracy)
    }
}

/// Fraction of `data` that `params` classifies correctly.
pub fn accuracy(params: &ModelParams, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    let chunk = 1000;
    let mut start = 0;
    while start < data.len() {
        let end = (start + chunk).min(data.len());
        let idx: Vec<usize> = (start..end).collect();
        let out = params.eval(&data.gather(&idx))?;
        for (row, &i) in idx.iter().enumerate() {
            if argmax(out.row(row)) == data.labels[i] {
                correct += 1;
            }
        }
        start = end;
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Trains `spec` with softmax cross-entropy and Adam.
///
/// All randomness (initialization, subset choice, shuffling, dropout)
/// derives from `config.seed`, so identical inputs give bit-identical
/// parameters.
pub fn train_classifier(
    spec: DenseNetSpec,
    train: &Dataset,
    test: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<TrainedClassifier> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut seen = alloc::vec![false; train.classes];
    train.labels.iter().for_each(|&l| seen[l] = true);
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(Error::Parameter(
            "training data needs at least 2 classes".into(),
        ));
    }
    if spec.input_dim() != train.dim() || spec.output_dim() < train.classes {
        return Err(Error::Shape {
            op: "train_classifier",
            left: spec.widths.clone(),
            right: alloc::vec![train.dim(), train.classes],
        });
    }

    let root = RngState::new(config.seed);
    let mut params = ModelParams::init(spec, &mut root.fork("init", 0))?;
    let used = libm::ceil(config.train_fraction * train.len() as f64) as usize;
    let mut pool = if used >= train.len() {
        (0..train.len()).collect()
    } else {
        root.fork("subset", 0).sample_indices(train.len(), used)
    };
    pool.sort_unstable();
    let subset = train.subset(&pool);

    let adam = config.adam();
    let mut state = AdamState::new();
    let mut dropout_rng = root.fork("dropout", 0);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..subset.len()).collect();
        root.fork("shuffle", epoch as u64).shuffle(&mut order);
        let mut total_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_size) {
            let xs = subset.gather(batch);
            let ys: Vec<usize> = batch.iter().map(|&i| subset.labels[i]).collect();
            let (loss, grads) = {
                let mut g = Graph::new();
                let bound = params.bind(&mut g, true);
                let x = g.constant(xs);
                let logits = params.forward_graph(&mut g, &bound, x, true, &mut dropout_rng)?;
                let loss = g.softmax_cross_entropy(logits, &ys)?;
                g.backward(loss)?;
                (g.value(loss).data()[0], bound.gradients(&mut g))
            };
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    op: "train_classifier",
                });
            }
            adam_step(&mut params, &grads, &mut state, &adam)?;
            total_loss += loss;
            batches += 1;
        }
        history.push(EpochRecord {
            epoch: epoch + 1,
            mean_loss: total_loss / batches as f64,
            train_accuracy: accuracy(&params, &subset)?,
            test_accuracy: test.map(|t| accuracy(&params, t)).transpose()?,
        });
    }
    Ok(TrainedClassifier {
        params,
        history,
        examples_used: subset.len(),
    })
}
