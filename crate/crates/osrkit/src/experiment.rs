//! The end-to-end pipeline.
//!
//! 1. Train the classifier in both regimes.
//! 2. Pick the first `input_count` test images that both classify correctly.
//! 3. Per input and regime: train a generator, build the GAN and noise
//!    neighbourhoods and the sensitivity pool, then evaluate every metric
//!    for every method.
//! 4. Aggregate into a [`MetricReport`].
//!
//! Each stage is also exposed on its own so the CLI can persist
//! intermediate artifacts between invocations.

use std::time::Instant;

use osrkit_core::attribution::{Attribution, AttributionConfig, Attributor, Method};
use osrkit_core::data::{make_synthetic_blobs, Dataset};
use osrkit_core::gan::{sample_similar, train_similar_gan, GanEpochRecord, GanTrainConfig};
use osrkit_core::metrics::{
    fidelity_mu, osr, robustness_sr, sensitivity_from_pool, sensitivity_pool, FidelityConfig,
    MethodExplainer, MetricKind, MetricRow, SkippedCell, SrOutcome,
};
use osrkit_core::nn::{values_digest, DenseNetSpec, ModelParams};
use osrkit_core::similar::{noise_neighborhood, NeighborhoodSource, SimilarSet};
use osrkit_core::train::{accuracy, train_classifier, Regime, TrainConfig};
use osrkit_core::RngState;
use serde::{Deserialize, Serialize};

use crate::checkpoint::CheckpointMeta;
use crate::config::{BaselineKind, DatasetKind, ExperimentConfig};
use crate::error::{Error, Result};
use crate::idx;
use crate::report::{
    DatasetRecord, Evaluation, ModelRecord, NeighborhoodRecord, PoolRecord, RegimeInputRecord,
    ReportFile, StageTiming, Timings,
};

/// Sub-seed derivation.
///
/// Every random stream is seeded with `derive_seed(master_seed, label, index)`
/// where `index` is the test-set index of the input (0 for global stages)
/// and `label` is one of:
///
/// | stream | label |
/// |---|---|
/// | synthetic dataset | `dataset` |
/// | classifier training | `classifier/{regime}` |
/// | generator training | `gan/{regime}` |
/// | generator sampling | `gan-samples/{regime}` |
/// | noise neighbourhoods | `noise-uniform/{regime}`, `noise-normal/{regime}` |
/// | sensitivity pool | `sensitivity-pool/{regime}` |
/// | attribution of the input | `attribution/{regime}/{method}` |
/// | one metric cell | `{metric}/{regime}/{method}` |
pub mod seeds {
    use osrkit_core::attribution::Method;
    use osrkit_core::metrics::MetricKind;
    use osrkit_core::rng::derive_seed;
    use osrkit_core::train::Regime;

    pub fn dataset(master: u64) -> u64 {
        derive_seed(master, "dataset", 0)
    }

    pub fn classifier(master: u64, regime: Regime) -> u64 {
        derive_seed(master, &format!("classifier/{}", regime.label()), 0)
    }

    pub fn gan(master: u64, regime: Regime, input: usize) -> u64 {
        derive_seed(master, &format!("gan/{}", regime.label()), input as u64)
    }

    pub fn gan_samples(master: u64, regime: Regime, input: usize) -> u64 {
        derive_seed(
            master,
            &format!("gan-samples/{}", regime.label()),
            input as u64,
        )
    }

    /// `kind` is `uniform` or `normal`.
    pub fn noise(master: u64, kind: &str, regime: Regime, input: usize) -> u64 {
        derive_seed(
            master,
            &format!("noise-{kind}/{}", regime.label()),
            input as u64,
        )
    }

    pub fn sensitivity_pool(master: u64, regime: Regime, input: usize) -> u64 {
        derive_seed(
            master,
            &format!("sensitivity-pool/{}", regime.label()),
            input as u64,
        )
    }

    pub fn attribution(master: u64, regime: Regime, method: Method, input: usize) -> u64 {
        derive_seed(
            master,
            &format!("attribution/{}/{}", regime.label(), method.id()),
            input as u64,
        )
    }

    pub fn cell(
        master: u64,
        metric: MetricKind,
        regime: Regime,
        method: Method,
        input: usize,
    ) -> u64 {
        derive_seed(
            master,
            &format!("{}/{}/{}", metric.id(), regime.label(), method.id()),
            input as u64,
        )
    }
}

fn stage<T>(name: &'static str, input: Option<usize>, seed: u64, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: name,
        input,
        seed,
        source: Box::new(e),
    })
}

fn core_stage<T>(
    name: &'static str,
    input: Option<usize>,
    seed: u64,
    r: osrkit_core::Result<T>,
) -> Result<T> {
    stage(name, input, seed, r.map_err(Error::from))
}

#[derive(Debug, Clone)]
pub struct Data {
    pub train: Dataset,
    pub test: Dataset,
}

impl Data {
    pub fn record(&self) -> DatasetRecord {
        DatasetRecord {
            source: self.train.source,
            train_len: self.train.len(),
            test_len: self.test.len(),
            dim: self.train.dim(),
            classes: self.train.classes,
        }
    }
}

pub fn load_data(config: &ExperimentConfig) -> Result<Data> {
    let (train, test) = match config.dataset.source {
        DatasetKind::Mnist => {
            let dir = config
                .dataset
                .dir
                .clone()
                .unwrap_or_else(idx::default_mnist_dir);
            idx::load_mnist(&dir)?
        }
        DatasetKind::SyntheticBlobs => {
            let b = &config.dataset.blobs;
            let seed = seeds::dataset(config.master_seed);
            core_stage(
                "dataset",
                None,
                seed,
                make_synthetic_blobs(b.classes, b.dims, b.n, b.separation, seed),
            )?
        }
    };
    Ok(Data { train, test })
}

/// A trained classifier with the facts the report needs about it.
#[derive(Debug, Clone)]
pub struct RegimeModel {
    pub regime: Regime,
    pub params: ModelParams,
    pub seed: u64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub examples_used: usize,
}

impl RegimeModel {
    pub fn meta(&self) -> CheckpointMeta {
        let mut meta = CheckpointMeta::new(&self.params, self.regime.label(), self.seed);
        meta.train_accuracy = Some(self.train_accuracy);
        meta.test_accuracy = Some(self.test_accuracy);
        meta.examples_used = Some(self.examples_used);
        meta
    }

    pub fn from_checkpoint(params: ModelParams, meta: &CheckpointMeta) -> Result<Self> {
        let regime = match meta.regime_label.as_str() {
            "well" => Regime::Well,
            "bad" => Regime::Bad,
            other => {
                return Err(Error::Config {
                    path: "checkpoint".into(),
                    message: format!("expected a classifier checkpoint, found `{other}`"),
                })
            }
        };
        let missing = |what: &str| Error::Config {
            path: "checkpoint".into(),
            message: format!("classifier checkpoint lacks {what}"),
        };
        Ok(Self {
            regime,
            seed: meta.seed,
            train_accuracy: meta
                .train_accuracy
                .ok_or_else(|| missing("train_accuracy"))?,
            test_accuracy: meta.test_accuracy.ok_or_else(|| missing("test_accuracy"))?,
            examples_used: meta.examples_used.ok_or_else(|| missing("examples_used"))?,
            params,
        })
    }

    pub fn record(&self) -> ModelRecord {
        ModelRecord {
            regime: self.regime,
            seed: self.seed,
            architecture: self.params.spec().describe(),
            params_digest: self.params.digest(),
            train_accuracy: self.train_accuracy,
            test_accuracy: self.test_accuracy,
            examples_used: self.examples_used,
        }
    }
}

pub fn classifier_spec(config: &ExperimentConfig, data: &Data) -> DenseNetSpec {
    let mut widths = vec![data.train.dim()];
    widths.extend(&config.classifier.hidden);
    widths.push(data.train.classes);
    DenseNetSpec::classifier(widths)
}

pub fn train_regime(config: &ExperimentConfig, data: &Data, regime: Regime) -> Result<RegimeModel> {
    let seed = seeds::classifier(config.master_seed, regime);
    let base = match regime {
        Regime::Well => &config.classifier.well,
        Regime::Bad => &config.classifier.bad,
    };
    let train_config = TrainConfig {
        seed,
        regime,
        ..base.clone()
    };
    let run = || -> osrkit_core::Result<RegimeModel> {
        let trained = train_classifier(
            classifier_spec(config, data),
            &data.train,
            None,
            &train_config,
        )?;
        Ok(RegimeModel {
            regime,
            seed,
            train_accuracy: accuracy(&trained.params, &data.train)?,
            test_accuracy: accuracy(&trained.params, &data.test)?,
            examples_used: trained.examples_used,
            params: trained.params,
        })
    };
    core_stage("train", None, seed, run())
}

/// Test indices of the first `input_count` images every model classifies
/// correctly.
pub fn select_inputs(
    config: &ExperimentConfig,
    test: &Dataset,
    models: &[RegimeModel],
) -> Result<Vec<usize>> {
    let mut picked = Vec::with_capacity(config.input_count);
    for i in 0..test.len() {
        if picked.len() == config.input_count {
            break;
        }
        let mut ok = true;
        for m in models {
            let pred = core_stage(
                "select",
                Some(i),
                config.master_seed,
                m.params.predict(test.image(i)),
            )?;
            ok &= pred.class == test.labels[i];
        }
        if ok {
            picked.push(i);
        }
    }
    if picked.len() < config.input_count {
        return Err(Error::Stage {
            stage: "select",
            input: None,
            seed: config.master_seed,
            source: Box::new(Error::Core(osrkit_core::Error::Contract(format!(
                "only {} of {} requested test inputs are classified correctly by every regime",
                picked.len(),
                config.input_count
            )))),
        });
    }
    Ok(picked)
}

#[derive(Debug, Clone)]
pub struct TrainedGenerator {
    pub regime: Regime,
    pub input_index: usize,
    pub seed: u64,
    pub params: ModelParams,
    pub anchor_digest: String,
    pub last_epoch: Option<GanEpochRecord>,
}

impl TrainedGenerator {
    pub fn meta(&self, delta: f64) -> CheckpointMeta {
        let mut meta = CheckpointMeta::new(&self.params, "gan-generator", self.seed);
        meta.anchor_digest = Some(self.anchor_digest.clone());
        meta.delta = Some(delta);
        meta
    }
}

pub fn train_generator(
    config: &ExperimentConfig,
    data: &Data,
    model: &RegimeModel,
    input_index: usize,
) -> Result<TrainedGenerator> {
    let seed = seeds::gan(config.master_seed, model.regime, input_index);
    let x = data.test.image(input_index);
    let gan_config = GanTrainConfig {
        seed,
        delta: config.osr.similarity.delta,
        ..config.gan.clone()
    };
    let trained = core_stage(
        "gan",
        Some(input_index),
        seed,
        train_similar_gan(&model.params, x, &gan_config),
    )?;
    Ok(TrainedGenerator {
        regime: model.regime,
        input_index,
        seed,
        anchor_digest: values_digest(x),
        last_epoch: trained.history.last().cloned(),
        params: trained.generator,
    })
}

/// Everything shared by the per-input evaluations.
pub struct Context<'a> {
    pub config: &'a ExperimentConfig,
    pub data: &'a Data,
    /// Reference image for integrated gradients, DeepLift and fidelity.
    pub baseline: Vec<f64>,
    pub attribution: AttributionConfig,
    pub fidelity: FidelityConfig,
}

impl<'a> Context<'a> {
    pub fn new(config: &'a ExperimentConfig, data: &'a Data) -> Self {
        let baseline = match config.baseline {
            BaselineKind::Black => vec![0.0; data.train.dim()],
            BaselineKind::DatasetMean => data.train.mean_image(),
        };
        let mut attribution = config.attribution.clone();
        attribution
            .ig_baseline
            .get_or_insert_with(|| baseline.clone());
        attribution
            .dl_baseline
            .get_or_insert_with(|| baseline.clone());
        let mut fidelity = config.fidelity.clone();
        fidelity.baseline.get_or_insert_with(|| baseline.clone());
        Self {
            config,
            data,
            baseline,
            attribution,
            fidelity,
        }
    }

    fn attributor<'m>(&self, model: &'m RegimeModel) -> Result<Attributor<'m>> {
        Ok(Attributor::new(&model.params, self.attribution.clone())?)
    }
}

pub fn anchor_id(input_index: usize) -> String {
    format!("test:{input_index}")
}

/// The attribution of one input under one regime and method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionRecord {
    pub regime: Regime,
    pub input_index: usize,
    pub seed: u64,
    pub attribution: Attribution,
}

fn explain_input(
    ctx: &Context<'_>,
    attributor: &Attributor<'_>,
    regime: Regime,
    method: Method,
    input_index: usize,
    class: usize,
) -> Result<AttributionRecord> {
    let seed = seeds::attribution(ctx.config.master_seed, regime, method, input_index);
    let x = ctx.data.test.image(input_index);
    let attribution = core_stage(
        "attribute",
        Some(input_index),
        seed,
        attributor.attribute(
            method,
            x,
            class,
            &anchor_id(input_index),
            &mut RngState::new(seed),
        ),
    )?;
    Ok(AttributionRecord {
        regime,
        input_index,
        seed,
        attribution,
    })
}

/// Every configured method's attribution of each input under `model`.
pub fn attribute_inputs(
    ctx: &Context<'_>,
    model: &RegimeModel,
    inputs: &[usize],
) -> Result<Vec<AttributionRecord>> {
    let attributor = ctx.attributor(model)?;
    let mut out = Vec::with_capacity(inputs.len() * ctx.config.methods.len());
    for &i in inputs {
        let class = core_stage(
            "attribute",
            Some(i),
            0,
            model.params.predict(ctx.data.test.image(i)),
        )?
        .class;
        for &method in &ctx.config.methods {
            out.push(explain_input(
                ctx,
                &attributor,
                model.regime,
                method,
                i,
                class,
            )?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct InputEvaluation {
    pub record: RegimeInputRecord,
    pub rows: Vec<MetricRow>,
    pub skipped: Vec<SkippedCell>,
}

fn neighborhood_record(
    set: &SimilarSet,
    seed: u64,
    rate: Option<f64>,
    delta: f64,
) -> NeighborhoodRecord {
    NeighborhoodRecord {
        source: set.source,
        seed,
        accepted: set.len(),
        rejected: set.rejected,
        misclassification_rate: rate,
        logit_deciles: set.logit_deciles(delta),
    }
}

/// Whether a metric error leaves a hole in the grid instead of halting.
fn is_gap(e: &osrkit_core::Error) -> bool {
    matches!(
        e,
        osrkit_core::Error::EmptyNeighborhood(_) | osrkit_core::Error::UndefinedCorrelation { .. }
    )
}

/// Runs stage (3) for one input under one regime.
pub fn evaluate_input(
    ctx: &Context<'_>,
    model: &RegimeModel,
    generator: &ModelParams,
    input_index: usize,
) -> Result<InputEvaluation> {
    let config = ctx.config;
    let master = config.master_seed;
    let regime = model.regime;
    let x = ctx.data.test.image(input_index);
    let at = Some(input_index);
    let prediction = core_stage("evaluate", at, master, model.params.predict(x))?;
    if prediction.class != ctx.data.test.labels[input_index] {
        return Err(Error::Stage {
            stage: "evaluate",
            input: at,
            seed: master,
            source: Box::new(Error::Core(osrkit_core::Error::Contract(format!(
                "{} model misclassifies test input {input_index}",
                regime.label()
            )))),
        });
    }
    let y = prediction.class;
    let delta = config.osr.similarity.delta;

    let gan_seed = seeds::gan_samples(master, regime, input_index);
    let gan_set = core_stage(
        "neighborhood",
        at,
        gan_seed,
        sample_similar(
            generator,
            &model.params,
            x,
            config.neighborhood.gan_candidates,
            &config.osr.similarity,
            config.gan.sample_with_dropout,
            &mut RngState::new(gan_seed),
        ),
    )?;
    let noise =
        |kind: &str, noise_kind| -> Result<(u64, osrkit_core::similar::NoiseNeighborhood)> {
            let seed = seeds::noise(master, kind, regime, input_index);
            let n = core_stage(
                "neighborhood",
                at,
                seed,
                noise_neighborhood(
                    x,
                    noise_kind,
                    config.neighborhood.noise_candidates,
                    &model.params,
                    &config.osr.similarity,
                    &mut RngState::new(seed),
                ),
            )?;
            Ok((seed, n))
        };
    let (uni_seed, uniform) = noise("uniform", config.neighborhood.uniform())?;
    let (norm_seed, normal) = noise("normal", config.neighborhood.normal())?;
    debug_assert_eq!(uniform.set.source, NeighborhoodSource::NoiseUniform);

    let pool_seed = seeds::sensitivity_pool(master, regime, input_index);
    let training = config
        .sensitivity
        .include_training_points
        .then_some(&ctx.data.train);
    let pool = core_stage(
        "sensitivity-pool",
        at,
        pool_seed,
        sensitivity_pool(
            &model.params,
            x,
            &config.sensitivity,
            training,
            &mut RngState::new(pool_seed),
        ),
    )?;

    let attributor = ctx.attributor(model)?;
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for &method in &config.methods {
        let explainer = MethodExplainer {
            attributor: &attributor,
            method,
        };
        let mut record =
            |metric: MetricKind,
             seed: u64,
             value: osrkit_core::Result<std::result::Result<f64, String>>| {
                let cell = |reason: String| SkippedCell {
                    input_index,
                    method: method.id().to_string(),
                    regime,
                    metric,
                    reason,
                };
                match value {
                    Ok(Ok(value)) => rows.push(MetricRow {
                        input_index,
                        method: method.id().to_string(),
                        regime,
                        metric,
                        value,
                        seed,
                    }),
                    Ok(Err(reason)) => skipped.push(cell(reason)),
                    Err(e) if is_gap(&e) => skipped.push(cell(e.to_string())),
                    Err(e) => {
                        return Err(Error::Stage {
                            stage: "evaluate",
                            input: at,
                            seed,
                            source: Box::new(Error::Core(e)),
                        })
                    }
                }
                Ok(())
            };

        for (metric, set) in [
            (MetricKind::Osr, &gan_set),
            (MetricKind::OsrUniform, &uniform.set),
            (MetricKind::OsrNormal, &normal.set),
        ] {
            let seed = seeds::cell(master, metric, regime, method, input_index);
            let v =
                osr(&explainer, x, set, &config.osr, &mut RngState::new(seed)).map(|v| Ok(v.value));
            record(metric, seed, v)?;
        }

        let seed = seeds::cell(master, MetricKind::Sensitivity, regime, method, input_index);
        let v = sensitivity_from_pool(
            &explainer,
            &model.params,
            &pool,
            &config.sensitivity,
            &mut RngState::new(seed),
        )
        .map(|v| Ok(v.value));
        record(MetricKind::Sensitivity, seed, v)?;

        let own = explain_input(ctx, &attributor, regime, method, input_index, y)?;
        let values = &own.attribution.values;

        let seed = seeds::cell(master, MetricKind::Fidelity, regime, method, input_index);
        let v = fidelity_mu(
            values,
            &model.params,
            x,
            &ctx.fidelity,
            &mut RngState::new(seed),
        )
        .map(Ok);
        record(MetricKind::Fidelity, seed, v)?;

        // Deterministic; the seed is recorded for uniformity only.
        let seed = seeds::cell(
            master,
            MetricKind::RobustnessSr,
            regime,
            method,
            input_index,
        );
        let v = robustness_sr(&model.params, x, y, values, &config.sr).map(|v| match v.outcome {
            SrOutcome::Found { budget } => Ok(budget),
            SrOutcome::NotFound { hi } => Err(format!("no class change within l2 budget {hi}")),
        });
        record(MetricKind::RobustnessSr, seed, v)?;
    }

    Ok(InputEvaluation {
        record: RegimeInputRecord {
            regime,
            input_index,
            predicted_class: y,
            anchor_logit: prediction.logit,
            generator_digest: generator.digest(),
            neighborhoods: vec![
                neighborhood_record(&gan_set, gan_seed, None, delta),
                neighborhood_record(
                    &uniform.set,
                    uni_seed,
                    Some(uniform.misclassification_rate),
                    delta,
                ),
                neighborhood_record(
                    &normal.set,
                    norm_seed,
                    Some(normal.misclassification_rate),
                    delta,
                ),
            ],
            sensitivity_pool: PoolRecord {
                seed: pool_seed,
                ball: pool.ball.len(),
                training: pool.training.len(),
            },
        },
        rows,
        skipped,
    })
}

/// Puts per-input results into report order: input, then method (config
/// order), then metric, then regime.
pub fn assemble(
    config: &ExperimentConfig,
    data: &Data,
    models: &[RegimeModel],
    inputs: Vec<usize>,
    generators: Vec<GeneratorSummary>,
    evaluations: Vec<InputEvaluation>,
) -> Evaluation {
    let method_pos = |id: &str| {
        config
            .methods
            .iter()
            .position(|m| m.id() == id)
            .unwrap_or(usize::MAX)
    };
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    let mut records = Vec::new();
    for e in evaluations {
        rows.extend(e.rows);
        skipped.extend(e.skipped);
        records.push(e.record);
    }
    rows.sort_by_key(|r| (r.input_index, method_pos(&r.method), r.metric, r.regime));
    skipped.sort_by_key(|r| (r.input_index, method_pos(&r.method), r.metric, r.regime));
    records.sort_by_key(|r| (r.input_index, r.regime));
    Evaluation {
        config: config.clone(),
        dataset: data.record(),
        models: models.iter().map(RegimeModel::record).collect(),
        inputs,
        generators,
        evaluations: records,
        rows,
        skipped,
    }
}

/// Provenance of one trained generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSummary {
    pub regime: Regime,
    pub input_index: usize,
    pub seed: u64,
    pub params_digest: String,
    pub anchor_digest: String,
    pub last_epoch: Option<GanEpochRecord>,
}

impl From<&TrainedGenerator> for GeneratorSummary {
    fn from(g: &TrainedGenerator) -> Self {
        Self {
            regime: g.regime,
            input_index: g.input_index,
            seed: g.seed,
            params_digest: g.params.digest(),
            anchor_digest: g.anchor_digest.clone(),
            last_epoch: g.last_epoch.clone(),
        }
    }
}

/// Progress notifications from [`run_with_data`].
#[derive(Debug, Clone)]
pub enum Event<'a> {
    Trained(&'a RegimeModel),
    Selected(&'a [usize]),
    Evaluated {
        regime: Regime,
        input_index: usize,
        done: usize,
        total: usize,
    },
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: ReportFile,
    pub timings: Timings,
}

/// Loads the configured dataset and runs the whole pipeline.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Outcome> {
    let data = load_data(config)?;
    run_with_data(config, &data, &mut |_| {})
}

pub fn run_with_data(
    config: &ExperimentConfig,
    data: &Data,
    on_event: &mut dyn FnMut(Event<'_>),
) -> Result<Outcome> {
    config.validate(std::path::Path::new("<config>"))?;
    let started = Instant::now();
    let mut models = Vec::new();
    let mut timings = Vec::new();
    for regime in Regime::ALL {
        let t = Instant::now();
        let m = train_regime(config, data, regime)?;
        timings.push(StageTiming::since("train", None, Some(regime), t));
        on_event(Event::Trained(&m));
        models.push(m);
    }
    let mut outcome = run_with_models(config, data, &models, on_event)?;
    timings.append(&mut outcome.timings.stages);
    outcome.timings = Timings {
        total_seconds: started.elapsed().as_secs_f64(),
        stages: timings,
    };
    Ok(outcome)
}

/// Stages (2) to (4) with classifiers already trained by [`train_regime`]
/// under the same configuration.
pub fn run_with_models(
    config: &ExperimentConfig,
    data: &Data,
    models: &[RegimeModel],
    on_event: &mut dyn FnMut(Event<'_>),
) -> Result<Outcome> {
    config.validate(std::path::Path::new("<config>"))?;
    for m in models {
        if m.seed != seeds::classifier(config.master_seed, m.regime) {
            return Err(Error::Stage {
                stage: "select",
                input: None,
                seed: config.master_seed,
                source: Box::new(Error::Core(osrkit_core::Error::Contract(format!(
                    "{} classifier was trained under another master seed",
                    m.regime.label()
                )))),
            });
        }
    }
    let started = Instant::now();
    let mut timings = Vec::new();
    let inputs = select_inputs(config, &data.test, models)?;
    on_event(Event::Selected(&inputs));

    let ctx = Context::new(config, data);
    let total = inputs.len() * models.len();
    let mut generators = Vec::new();
    let mut evaluations = Vec::new();
    for &i in &inputs {
        for m in models {
            let t = Instant::now();
            let g = train_generator(config, data, m, i)?;
            timings.push(StageTiming::since("gan", Some(i), Some(m.regime), t));
            let t = Instant::now();
            evaluations.push(evaluate_input(&ctx, m, &g.params, i)?);
            timings.push(StageTiming::since("evaluate", Some(i), Some(m.regime), t));
            generators.push(GeneratorSummary::from(&g));
            on_event(Event::Evaluated {
                regime: m.regime,
                input_index: i,
                done: evaluations.len(),
                total,
            });
        }
    }
    let evaluation = assemble(config, data, models, inputs, generators, evaluations);
    let report = ReportFile::from_evaluation(evaluation)?;
    Ok(Outcome {
        report,
        timings: Timings {
            total_seconds: started.elapsed().as_secs_f64(),
            stages: timings,
        },
    })
}
