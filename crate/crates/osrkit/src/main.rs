use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context as _, Result};
use clap::{Parser, Subcommand};
use osrkit::checkpoint;
use osrkit::config::ExperimentConfig;
use osrkit::experiment::{
    self, attribute_inputs, evaluate_input, load_data, seeds, select_inputs, train_generator,
    train_regime, Context, Data, Event, GeneratorSummary, RegimeModel,
};
use osrkit::idx::DATA_DIR_ENV;
use osrkit::report::{
    self, Evaluation, ReportFile, StageTiming, Timings, REPORT_FILE, TIMINGS_FILE,
};
use osrkit_core::nn::ModelParams;
use osrkit_core::train::Regime;

/// Attribution robustness experiments on output-similar inputs.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `master_seed` from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for checkpoints, reports and plot data.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Dataset root (MNIST is read from `<dir>/mnist`).
    #[arg(long, global = true, env = DATA_DIR_ENV)]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the classifier in both regimes.
    Train,
    /// Select inputs and train one generator per input and regime.
    Gan,
    /// Attribute every selected input with every method.
    Attribute,
    /// Compute every metric from the trained models and generators.
    Evaluate,
    /// Aggregate, rank and compare regimes into report.json.
    Rank,
    /// Write one plot CSV per metric from report.json.
    Report,
    /// All stages in one process.
    Run,
    /// Print the effective configuration as TOML.
    Config,
}

struct Layout {
    root: PathBuf,
}

impl Layout {
    fn model(&self, regime: Regime) -> PathBuf {
        self.root
            .join("models")
            .join(format!("{}.ckpt", regime.label()))
    }
    fn generator(&self, regime: Regime, input: usize) -> PathBuf {
        self.root
            .join("generators")
            .join(format!("{}-{input}.ckpt", regime.label()))
    }
    fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
    fn plots(&self) -> PathBuf {
        self.root.join("plots")
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.master_seed = seed;
    }
    if let (Some(root), None) = (&cli.data_dir, &config.dataset.dir) {
        config.dataset.dir = Some(root.join("mnist"));
    }
    config.validate(cli.config.as_deref().unwrap_or(Path::new("<defaults>")))?;
    Ok(config)
}

fn load_models(config: &ExperimentConfig, layout: &Layout) -> Result<Vec<RegimeModel>> {
    Regime::ALL
        .iter()
        .map(|&regime| {
            let path = layout.model(regime);
            let (params, meta) = checkpoint::load(&path).with_context(|| {
                format!("loading {} (run `osrkit train` first)", path.display())
            })?;
            let model = RegimeModel::from_checkpoint(params, &meta)?;
            if model.regime != regime || model.seed != seeds::classifier(config.master_seed, regime)
            {
                bail!(
                    "{} was trained for another regime or seed; rerun `osrkit train`",
                    path.display()
                );
            }
            Ok(model)
        })
        .collect()
}

fn load_generator(layout: &Layout, summary: &GeneratorSummary) -> Result<ModelParams> {
    let path = layout.generator(summary.regime, summary.input_index);
    let (params, meta) = checkpoint::load(&path)
        .with_context(|| format!("loading {} (run `osrkit gan` first)", path.display()))?;
    if meta.params_digest != summary.params_digest {
        bail!(
            "{} does not match generators.json; rerun `osrkit gan`",
            path.display()
        );
    }
    Ok(params)
}

fn load_inputs(layout: &Layout) -> Result<Vec<usize>> {
    let path = layout.file("inputs.json");
    report::read_json(&path)
        .with_context(|| format!("reading {} (run `osrkit gan` first)", path.display()))
}

fn save_model(layout: &Layout, m: &RegimeModel) -> Result<()> {
    checkpoint::save(&layout.model(m.regime), &m.params, &m.meta())?;
    eprintln!(
        "{}: train accuracy {:.4}, test accuracy {:.4} ({} examples)",
        m.regime.label(),
        m.train_accuracy,
        m.test_accuracy,
        m.examples_used
    );
    Ok(())
}

fn train(config: &ExperimentConfig, data: &Data, layout: &Layout) -> Result<()> {
    for regime in Regime::ALL {
        save_model(layout, &train_regime(config, data, regime)?)?;
    }
    Ok(())
}

fn gan(config: &ExperimentConfig, data: &Data, layout: &Layout) -> Result<()> {
    let models = load_models(config, layout)?;
    let inputs = select_inputs(config, &data.test, &models)?;
    report::write_json(&layout.file("inputs.json"), &inputs)?;
    let mut summaries = Vec::new();
    for &i in &inputs {
        for m in &models {
            let t = Instant::now();
            let g = train_generator(config, data, m, i)?;
            checkpoint::save(
                &layout.generator(m.regime, i),
                &g.params,
                &g.meta(config.osr.similarity.delta),
            )?;
            eprintln!(
                "generator {}-{i} trained in {:.1}s",
                m.regime.label(),
                t.elapsed().as_secs_f64()
            );
            summaries.push(GeneratorSummary::from(&g));
        }
    }
    report::write_json(&layout.file("generators.json"), &summaries)?;
    Ok(())
}

fn attribute(config: &ExperimentConfig, data: &Data, layout: &Layout) -> Result<()> {
    let models = load_models(config, layout)?;
    let inputs = match load_inputs(layout) {
        Ok(i) => i,
        Err(_) => select_inputs(config, &data.test, &models)?,
    };
    let ctx = Context::new(config, data);
    let mut records = Vec::new();
    for m in &models {
        records.extend(attribute_inputs(&ctx, m, &inputs)?);
    }
    report::write_json(&layout.file("attributions.json"), &records)?;
    eprintln!("{} attributions written", records.len());
    Ok(())
}

fn evaluate(config: &ExperimentConfig, data: &Data, layout: &Layout) -> Result<()> {
    let models = load_models(config, layout)?;
    let inputs = load_inputs(layout)?;
    let path = layout.file("generators.json");
    let summaries: Vec<GeneratorSummary> = report::read_json(&path)
        .with_context(|| format!("reading {} (run `osrkit gan` first)", path.display()))?;
    let ctx = Context::new(config, data);
    let mut evaluations = Vec::new();
    for &i in &inputs {
        for m in &models {
            let summary = summaries
                .iter()
                .find(|s| s.regime == m.regime && s.input_index == i)
                .with_context(|| {
                    format!(
                        "no generator for {}-{i}; rerun `osrkit gan`",
                        m.regime.label()
                    )
                })?;
            let generator = load_generator(layout, summary)?;
            evaluations.push(evaluate_input(&ctx, m, &generator, i)?);
            eprintln!("evaluated {}-{i}", m.regime.label());
        }
    }
    let evaluation = experiment::assemble(config, data, &models, inputs, summaries, evaluations);
    report::write_json(&layout.file("evaluation.json"), &evaluation)?;
    Ok(())
}

fn rank(layout: &Layout) -> Result<()> {
    let path = layout.file("evaluation.json");
    let evaluation: Evaluation = report::read_json(&path)
        .with_context(|| format!("reading {} (run `osrkit evaluate` first)", path.display()))?;
    let report = ReportFile::from_evaluation(evaluation)?;
    report::write_report(&layout.file(REPORT_FILE), &report)?;
    print_summary(&report);
    Ok(())
}

fn plots(layout: &Layout) -> Result<()> {
    let path = layout.file(REPORT_FILE);
    let report =
        report::read_report(&path).with_context(|| format!("reading {}", path.display()))?;
    for p in report::emit_plot_data(&report, &layout.plots())? {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn run(config: &ExperimentConfig, data: &Data, layout: &Layout) -> Result<()> {
    let mut on_event = |e: Event<'_>| match e {
        Event::Trained(m) => {
            if let Err(err) = save_model(layout, m) {
                eprintln!("warning: could not save checkpoint: {err:#}");
            }
        }
        Event::Selected(inputs) => eprintln!("evaluating test inputs {inputs:?}"),
        Event::Evaluated {
            regime,
            input_index,
            done,
            total,
        } => eprintln!("[{done}/{total}] {}-{input_index}", regime.label()),
    };
    let outcome = experiment::run_with_data(config, data, &mut on_event)?;
    report::write_report(&layout.file(REPORT_FILE), &outcome.report)?;
    report::write_json(&layout.file(TIMINGS_FILE), &outcome.timings)?;
    report::emit_plot_data(&outcome.report, &layout.plots())?;
    print_summary(&outcome.report);
    eprintln!("total {:.1}s", outcome.timings.total_seconds);
    Ok(())
}

fn print_summary(report: &ReportFile) {
    for r in &report.metrics.rankings {
        println!(
            "{:<14} {:<5} {}",
            r.metric.id(),
            r.regime.label(),
            r.order.join(" > ")
        );
    }
    for s in &report.metrics.stability {
        match s.kendall_tau {
            Some(t) => println!("{:<14} tau {t:+.3}", s.metric.id()),
            None => println!("{:<14} tau undefined", s.metric.id()),
        }
    }
    if let Some(flag) = report.metrics.osr_at_least_as_stable {
        println!("osr at least as stable as sensitivity: {flag}");
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let layout = Layout {
        root: cli.out_dir.clone(),
    };
    match cli.command {
        Command::Rank => return rank(&layout),
        Command::Report => return plots(&layout),
        _ => {}
    }
    let config = load_config(&cli)?;
    if let Command::Config = cli.command {
        print!("{}", config.to_toml());
        return Ok(());
    }
    let data = load_data(&config).context("loading the dataset")?;
    let start = Instant::now();
    let (stage, done) = match cli.command {
        Command::Train => ("train", train(&config, &data, &layout)),
        Command::Gan => ("gan", gan(&config, &data, &layout)),
        Command::Attribute => ("attribute", attribute(&config, &data, &layout)),
        Command::Evaluate => ("evaluate", evaluate(&config, &data, &layout)),
        Command::Run => return run(&config, &data, &layout),
        Command::Rank | Command::Report | Command::Config => unreachable!("handled above"),
    };
    done?;
    record_stage(&layout, StageTiming::since(stage, None, None, start))
}

/// Replaces this stage's entry in `timings.json`, keeping the others.
fn record_stage(layout: &Layout, timing: StageTiming) -> Result<()> {
    let path = layout.file(TIMINGS_FILE);
    let mut timings: Timings = report::read_json(&path).unwrap_or_default();
    timings.stages.retain(|s| s.stage != timing.stage);
    timings.stages.push(timing);
    timings.total_seconds = timings.stages.iter().map(|s| s.seconds).sum();
    report::write_json(&path, &timings)?;
    Ok(())
}
