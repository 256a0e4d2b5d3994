//! Per-input GAN that generates output-similar inputs.
//!
//! For an anchor `x` with predicted class `y` under a frozen classifier
//! `F`, the generator `G` maps noise `z ~ N(0, I)` to images and minimizes
//!
//! ```text
//! log(1 - D(G(z))) + L_y + CE(softmax(F(G(z))), y)
//! L_y = |F_y(x) - F_y(G(z)) - delta|   if F_y(x) - F_y(G(z)) < delta
//!     = 0                              otherwise
//! ```
//!
//! while the discriminator `D` keeps the usual GAN objective against a real
//! set made of copies of `x`.
//!
//! Training uses the non-saturating form `-log D(G(z))` of the first term
//! by default ([`AdversarialTerm`]). Both forms share the same fixed point,
//! but with copies of a single image as real data the discriminator wins
//! within a few steps and `log(1 - D(G(z)))` then stops passing gradient to
//! the generator: it drifts to whatever satisfies `F` alone, far from `x`.
//!
//! `L_y` is one-sided: a generated logit far *below* the anchor's costs
//! nothing, so it does not by itself enforce `|F_y(x) - F_y(G(z))| <= delta`.
//! That guarantee comes from [`crate::similar::filter_similar`]. The third
//! term admits another reading, `-F(G(z)) log F(G(z))` (a self-entropy of
//! the generated logits); the cross-entropy against the anchor class is used
//! here.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{softplus, Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseNetSpec, ModelParams};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::rng::RngState;
use crate::similar::{filter_similar, NeighborhoodSource, SimilarSet, SimilarityConfig};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanTrainConfig {
    pub noise_dim: usize,
    /// Size of the real set; every element is the anchor.
    pub dataset_copies: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub gen_lr: f64,
    pub disc_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub dropout: f64,
    pub leaky_alpha: f64,
    /// Width of the first generator hidden layer; each further one doubles.
    pub first_hidden: usize,
    /// Number of generator hidden layers.
    pub hidden_layers: usize,
    pub delta: f64,
    pub adversarial: AdversarialTerm,
    /// Keep the generator's dropout active when sampling. Inference mode
    /// turns every `z` into nearly the same image with a logit at the `delta`
    /// boundary; active dropout spreads the samples.
    pub sample_with_dropout: bool,
    pub seed: u64,
}

/// Form of the generator's adversarial term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialTerm {
    /// Minimize `log(1 - D(G(z)))`.
    Saturating,
    /// Minimize `-log D(G(z))`; same fixed point, stronger gradient while
    /// the discriminator rejects the samples.
    NonSaturating,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        Self {
            noise_dim: 100,
            dataset_copies: 1500,
            epochs: 2,
            batch_size: 64,
            gen_lr: 2e-4,
            disc_lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            dropout: 0.3,
            leaky_alpha: 0.2,
            first_hidden: 128,
            hidden_layers: 5,
            delta: crate::similar::DEFAULT_DELTA,
            adversarial: AdversarialTerm::NonSaturating,
            sample_with_dropout: true,
            seed: 0,
        }
    }
}

impl GanTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.noise_dim == 0
            || self.dataset_copies == 0
            || self.epochs == 0
            || self.batch_size == 0
            || self.first_hidden == 0
            || self.hidden_layers == 0
        {
            return Err(Error::Parameter("GAN counts must be at least 1".into()));
        }
        if !(self.gen_lr > 0.0 && self.disc_lr > 0.0) {
            return Err(Error::Parameter(
                "GAN learning rates must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Parameter(format!(
                "dropout {} not in [0, 1)",
                self.dropout
            )));
        }
        if !(self.delta > 0.0) {
            return Err(Error::Parameter(format!(
                "delta must be positive, got {}",
                self.delta
            )));
        }
        Ok(())
    }

    fn hidden_widths(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.hidden_layers).map(|i| self.first_hidden << i)
    }

    /// `noise_dim → 128 → 256 → … → d`, leaky ReLU and dropout between
    /// layers, sigmoid output.
    pub fn generator_spec(&self, d: usize) -> DenseNetSpec {
        let mut widths = alloc::vec![self.noise_dim];
        widths.extend(self.hidden_widths());
        widths.push(d);
        DenseNetSpec::uniform(
            widths,
            Activation::LeakyRelu {
                alpha: self.leaky_alpha,
            },
            self.dropout,
            Activation::Sigmoid,
        )
    }

    /// Mirror of the generator: `d → … → 256 → 128 → 1`, emitting the
    /// discriminator logit (its sigmoid is `D(x)`).
    pub fn discriminator_spec(&self, d: usize) -> DenseNetSpec {
        let mut widths = alloc::vec![d];
        let hidden: Vec<usize> = self.hidden_widths().collect();
        widths.extend(hidden.into_iter().rev());
        widths.push(1);
        DenseNetSpec::uniform(
            widths,
            Activation::LeakyRelu {
                alpha: self.leaky_alpha,
            },
            self.dropout,
            Activation::Identity,
        )
    }

    fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            learning_rate: lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: 1e-8,
        }
    }
}

/// Generator loss terms for a single generated sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorLoss {
    pub adversarial: f64,
    pub logit: f64,
    pub cross_entropy: f64,
}

impl GeneratorLoss {
    pub fn total(&self) -> f64 {
        self.adversarial + self.logit + self.cross_entropy
    }
}

/// The logit term `L_y` for anchor and generated prediction logits.
pub fn logit_loss(anchor_logit: f64, generated_logit: f64, delta: f64) -> f64 {
    let gap = anchor_logit - generated_logit;
    if gap < delta {
        libm::fabs(gap - delta)
    } else {
        0.0
    }
}

/// Generator objective for one sample. `disc_logit` is the discriminator's
/// pre-sigmoid output on `G(z)`.
pub fn gan_generator_loss(
    disc_logit: f64,
    anchor_logits: &[f64],
    generated_logits: &[f64],
    y: usize,
    delta: f64,
    term: AdversarialTerm,
) -> Result<GeneratorLoss> {
    if y >= anchor_logits.len() || y >= generated_logits.len() {
        return Err(Error::Index {
            index: y,
            len: anchor_logits.len().min(generated_logits.len()),
        });
    }
    let mut probs = alloc::vec![0.0; generated_logits.len()];
    let lse = crate::autodiff::softmax_into(generated_logits, &mut probs);
    Ok(GeneratorLoss {
        // log(1 - sigmoid(l)) = -softplus(l), -log sigmoid(l) = softplus(-l)
        adversarial: match term {
            AdversarialTerm::Saturating => -softplus(disc_logit),
            AdversarialTerm::NonSaturating => softplus(-disc_logit),
        },
        logit: logit_loss(anchor_logits[y], generated_logits[y], delta),
        cross_entropy: lse - generated_logits[y],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanEpochRecord {
    pub epoch: usize,
    pub disc_loss: f64,
    pub gen_adversarial: f64,
    pub gen_logit: f64,
    pub gen_cross_entropy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedGan {
    pub generator: ModelParams,
    pub discriminator: ModelParams,
    pub history: Vec<GanEpochRecord>,
    pub anchor_class: usize,
    pub anchor_logit: f64,
}

fn noise(rng: &mut RngState, n: usize, dim: usize) -> Tensor {
    let data = (0..n * dim).map(|_| rng.standard_normal()).collect();
    Tensor::matrix(n, dim, data).expect("sized")
}

fn tile(x: &[f64], n: usize) -> Tensor {
    let mut data = Vec::with_capacity(n * x.len());
    for _ in 0..n {
        data.extend_from_slice(x);
    }
    Tensor::matrix(n, x.len(), data).expect("sized")
}

fn scalar(g: &Graph<'_>, v: Var) -> f64 {
    g.value(v).data()[0]
}

fn diverged(iteration: usize, parts: &[(&str, f64)]) -> Option<Error> {
    if parts.iter().all(|(_, v)| v.is_finite()) {
        return None;
    }
    let components: Vec<String> = parts.iter().map(|(k, v)| format!("{k}={v}")).collect();
    Some(Error::GanDiverged {
        iteration,
        components: components.join(", "),
    })
}

/// Trains a GAN whose samples mimic `x` while keeping `F_y` near `F_y(x)`.
///
/// `model` is only read. Steps alternate one discriminator update and one
/// generator update per batch.
pub fn train_similar_gan(
    model: &ModelParams,
    x: &[f64],
    config: &GanTrainConfig,
) -> Result<TrainedGan> {
    config.validate()?;
    let anchor = model.predict(x)?;
    if !anchor.logits.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            op: "train_similar_gan",
        });
    }
    let d = x.len();
    let y = anchor.class;
    let root = RngState::new(config.seed);
    let mut generator =
        ModelParams::init(config.generator_spec(d), &mut root.fork("generator", 0))?;
    let mut discriminator = ModelParams::init(
        config.discriminator_spec(d),
        &mut root.fork("discriminator", 0),
    )?;
    let mut z_rng = root.fork("noise", 0);
    let mut drop_rng = root.fork("dropout", 0);
    let (g_adam, d_adam) = (config.adam(config.gen_lr), config.adam(config.disc_lr));
    let (mut g_state, mut d_state) = (AdamState::new(), AdamState::new());

    let mut history = Vec::with_capacity(config.epochs);
    let mut iteration = 0usize;
    for epoch in 0..config.epochs {
        let mut sums = [0.0; 4];
        let mut batches = 0usize;
        let mut left = config.dataset_copies;
        while left > 0 {
            let n = left.min(config.batch_size);
            left -= n;
            iteration += 1;

            // Discriminator: softplus(-l_real) + softplus(l_fake).
            let fake =
                generator.forward(&noise(&mut z_rng, n, config.noise_dim), true, &mut drop_rng)?;
            let (d_loss, d_grads) = {
                let mut g = Graph::new();
                let bound = discriminator.bind(&mut g, true);
                let real = g.constant(tile(x, n));
                let l_real =
                    discriminator.forward_graph(&mut g, &bound, real, true, &mut drop_rng)?;
                let fake = g.constant(fake);
                let l_fake =
                    discriminator.forward_graph(&mut g, &bound, fake, true, &mut drop_rng)?;
                let neg = g.scale(l_real, -1.0);
                let sp_real = g.softplus(neg);
                let sp_fake = g.softplus(l_fake);
                let a = g.mean(sp_real);
                let b = g.mean(sp_fake);
                let loss = g.add(a, b)?;
                g.backward(loss)?;
                (scalar(&g, loss), bound.gradients(&mut g))
            };
            if let Some(e) = diverged(iteration, &[("disc", d_loss)]) {
                return Err(e);
            }
            adam_step(&mut discriminator, &d_grads, &mut d_state, &d_adam)?;

            // Generator.
            let z = noise(&mut z_rng, n, config.noise_dim);
            let (parts, g_grads) = {
                let mut g = Graph::new();
                let gen_bound = generator.bind(&mut g, true);
                let disc_bound = discriminator.bind(&mut g, false);
                let f_bound = model.bind(&mut g, false);
                let z = g.constant(z);
                let sample = generator.forward_graph(&mut g, &gen_bound, z, true, &mut drop_rng)?;
                let l_fake = discriminator.forward_graph(
                    &mut g,
                    &disc_bound,
                    sample,
                    true,
                    &mut drop_rng,
                )?;
                let logits = model.forward_graph(&mut g, &f_bound, sample, false, &mut drop_rng)?;

                let adversarial = match config.adversarial {
                    AdversarialTerm::Saturating => {
                        let sp = g.softplus(l_fake);
                        let sp = g.mean(sp);
                        g.scale(sp, -1.0)
                    }
                    AdversarialTerm::NonSaturating => {
                        let neg = g.scale(l_fake, -1.0);
                        let sp = g.softplus(neg);
                        g.mean(sp)
                    }
                };
                // relu(F_y(G(z)) - F_y(x) + delta) is the case-split above.
                let targets = alloc::vec![y; n];
                let picked = g.pick(logits, &targets)?;
                let shifted = g.offset(picked, config.delta - anchor.logit);
                let hinge = g.relu(shifted);
                let logit_term = g.mean(hinge);
                let ce = g.softmax_cross_entropy(logits, &targets)?;
                let partial = g.add(adversarial, logit_term)?;
                let loss = g.add(partial, ce)?;
                g.backward(loss)?;
                (
                    [
                        scalar(&g, adversarial),
                        scalar(&g, logit_term),
                        scalar(&g, ce),
                    ],
                    gen_bound.gradients(&mut g),
                )
            };
            if let Some(e) = diverged(
                iteration,
                &[
                    ("adversarial", parts[0]),
                    ("logit", parts[1]),
                    ("cross_entropy", parts[2]),
                ],
            ) {
                return Err(e);
            }
            adam_step(&mut generator, &g_grads, &mut g_state, &g_adam)?;

            sums[0] += d_loss;
            sums[1..].iter_mut().zip(parts).for_each(|(s, p)| *s += p);
            batches += 1;
        }
        let b = batches as f64;
        history.push(GanEpochRecord {
            epoch: epoch + 1,
            disc_loss: sums[0] / b,
            gen_adversarial: sums[1] / b,
            gen_logit: sums[2] / b,
            gen_cross_entropy: sums[3] / b,
        });
    }
    Ok(TrainedGan {
        generator,
        discriminator,
        history,
        anchor_class: y,
        anchor_logit: anchor.logit,
    })
}

/// Generates `n` candidates and keeps the similar ones. With `dropout`
/// the generator's dropout masks are drawn from `rng` after the noise.
pub fn sample_similar(
    generator: &ModelParams,
    model: &ModelParams,
    x: &[f64],
    n: usize,
    config: &SimilarityConfig,
    dropout: bool,
    rng: &mut RngState,
) -> Result<SimilarSet> {
    let noise_dim = generator.spec().input_dim();
    let candidates = if n == 0 {
        Tensor::matrix(0, x.len(), Vec::new())?
    } else {
        let z = noise(rng, n, noise_dim);
        generator.forward(&z, dropout, rng)?
    };
    filter_similar(&candidates, model, x, config, NeighborhoodSource::Gan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_synthetic_blobs;
    use crate::train::{train_classifier, TrainConfig};

    #[test]
    fn logit_loss_case_split() {
        assert_eq!(logit_loss(3.0, -2.0, 5.0), 0.0);
        assert_eq!(logit_loss(3.0, 3.0, 5.0), 5.0);
        assert_eq!(logit_loss(3.0, -3.0, 5.0), 0.0);
        assert!((logit_loss(3.0, 1.0, 5.0) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn generator_loss_terms() {
        let l = gan_generator_loss(
            0.0,
            &[2.0, 0.0],
            &[0.0, 0.0],
            0,
            5.0,
            AdversarialTerm::Saturating,
        )
        .unwrap();
        assert!((l.adversarial - (0.5f64).ln()).abs() < 1e-12);
        let ns = gan_generator_loss(
            3.0,
            &[2.0, 0.0],
            &[0.0, 0.0],
            0,
            5.0,
            AdversarialTerm::NonSaturating,
        )
        .unwrap();
        assert!((ns.adversarial + (1.0 / (1.0 + (-3.0f64).exp())).ln()).abs() < 1e-12);
        assert!((l.logit - 3.0).abs() < 1e-12);
        assert!((l.cross_entropy - 2f64.ln()).abs() < 1e-12);
        assert!((l.total() - (0.5f64.ln() + 3.0 + 2f64.ln())).abs() < 1e-12);
        assert!(
            gan_generator_loss(0.0, &[1.0], &[1.0], 1, 5.0, AdversarialTerm::Saturating).is_err()
        );
    }

    #[test]
    fn architecture_mirrors() {
        let c = GanTrainConfig::default();
        assert_eq!(c.noise_dim, 100);
        assert_eq!(c.dataset_copies, 1500);
        assert_eq!(
            c.generator_spec(784).widths,
            alloc::vec![100, 128, 256, 512, 1024, 2048, 784]
        );
        assert_eq!(
            c.discriminator_spec(784).widths,
            alloc::vec![784, 2048, 1024, 512, 256, 128, 1]
        );
        assert_eq!(c.generator_spec(784).layer_count(), 6);
    }

    fn small_setup() -> (ModelParams, Vec<f64>, GanTrainConfig) {
        let (train, _) = make_synthetic_blobs(2, 4, 200, 6.0, 3).unwrap();
        let model = train_classifier(
            DenseNetSpec::classifier(alloc::vec![4, 8, 2]),
            &train,
            None,
            &TrainConfig {
                epochs: 3,
                ..TrainConfig::well()
            },
        )
        .unwrap()
        .params;
        let cfg = GanTrainConfig {
            noise_dim: 4,
            dataset_copies: 64,
            epochs: 3,
            batch_size: 16,
            first_hidden: 8,
            hidden_layers: 2,
            delta: 1.0,
            ..GanTrainConfig::default()
        };
        (model, train.image(0).to_vec(), cfg)
    }

    #[test]
    fn training_leaves_classifier_untouched_and_is_deterministic() {
        let (model, x, cfg) = small_setup();
        let before = model.digest();
        let a = train_similar_gan(&model, &x, &cfg).unwrap();
        assert_eq!(model.digest(), before);
        let b = train_similar_gan(&model, &x, &cfg).unwrap();
        assert_eq!(a.generator.digest(), b.generator.digest());
        assert_eq!(a.history.len(), 3);

        let sim = SimilarityConfig {
            delta: 1.0,
            rho: None,
        };
        let s1 = sample_similar(
            &a.generator,
            &model,
            &x,
            50,
            &sim,
            true,
            &mut RngState::new(4),
        )
        .unwrap();
        let s2 = sample_similar(
            &a.generator,
            &model,
            &x,
            50,
            &sim,
            true,
            &mut RngState::new(4),
        )
        .unwrap();
        assert_eq!(s1, s2);
        assert_eq!(s1.len() + s1.rejected, 50);
        let generated = a
            .generator
            .eval(&noise(&mut RngState::new(5), 20, 4))
            .unwrap();
        assert!(generated.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn zero_samples_is_empty() {
        let (model, x, cfg) = small_setup();
        let gan = train_similar_gan(&model, &x, &GanTrainConfig { epochs: 1, ..cfg }).unwrap();
        let s = sample_similar(
            &gan.generator,
            &model,
            &x,
            0,
            &SimilarityConfig::default(),
            true,
            &mut RngState::new(0),
        )
        .unwrap();
        assert!(s.is_empty());
        assert_eq!(s.rejected, 0);
    }

    #[test]
    fn dropout_sampling_is_seeded_and_differs_from_inference() {
        let (model, x, cfg) = small_setup();
        let gan = train_similar_gan(&model, &x, &GanTrainConfig { epochs: 1, ..cfg }).unwrap();
        let sim = SimilarityConfig {
            delta: 100.0,
            rho: None,
        };
        let draw = |dropout, seed| {
            sample_similar(
                &gan.generator,
                &model,
                &x,
                20,
                &sim,
                dropout,
                &mut RngState::new(seed),
            )
            .unwrap()
        };
        assert_eq!(draw(true, 3), draw(true, 3));
        assert_ne!(draw(true, 3), draw(false, 3));
        assert_ne!(draw(true, 3), draw(true, 4));
    }
}
