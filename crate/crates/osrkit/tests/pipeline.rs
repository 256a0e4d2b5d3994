use std::time::Instant;

use osrkit::config::DatasetKind;
use osrkit::experiment::{load_data, run_with_data, Event};
use osrkit::report::{
    emit_plot_data, plot_path, read_plot_data, read_report, write_report, REPORT_FILE,
};
use osrkit::{run_experiment, ExperimentConfig, ReportFile};
use osrkit_core::attribution::Method;
use osrkit_core::metrics::{Direction, MetricKind};
use osrkit_core::train::Regime;

fn small(methods: Vec<Method>, input_count: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        input_count,
        methods,
        ..ExperimentConfig::default()
    };
    c.dataset.source = DatasetKind::SyntheticBlobs;
    c.classifier.hidden = vec![16];
    c.gan.noise_dim = 8;
    c.gan.first_hidden = 16;
    c.gan.hidden_layers = 2;
    c.gan.dataset_copies = 256;
    c.neighborhood.gan_candidates = 200;
    c.neighborhood.noise_candidates = 200;
    c
}

#[test]
fn single_input_smoke_run_is_fast() {
    let start = Instant::now();
    let out = run_experiment(&small(vec![Method::Saliency], 1)).unwrap();
    assert!(start.elapsed().as_secs() < 120);
    assert_eq!(out.report.inputs.len(), 1);
    assert_eq!(out.report.models.len(), 2);
    assert_eq!(out.report.generators.len(), 2);
    assert!(!out.report.metrics.summaries.is_empty());
}

#[test]
fn plot_csv_matches_report_aggregates() {
    let config = small(vec![Method::Saliency, Method::IntegratedGradients], 2);
    let out = run_experiment(&config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let written = emit_plot_data(&out.report, dir.path()).unwrap();
    assert!(!written.is_empty());

    for metric in MetricKind::ALL {
        let path = plot_path(dir.path(), metric);
        if !path.exists() {
            continue;
        }
        let rows = read_plot_data(&path).unwrap();
        let with_both: usize = ["saliency", "integrated_gradients"]
            .iter()
            .filter(|m| rows.iter().filter(|r| r.method == **m).count() == 2)
            .count();
        if with_both == 2 {
            assert_eq!(rows.len(), 4, "{metric:?}");
        }
        for r in &rows {
            let s = out
                .report
                .metrics
                .summaries
                .iter()
                .find(|s| s.metric == metric && s.method == r.method && s.regime == r.regime)
                .unwrap();
            assert_eq!(
                (r.mean, r.std, r.n),
                (s.mean, s.std, s.n),
                "{metric:?} {}",
                r.method
            );
        }
        // methods appear best-first for the well regime
        let well: Vec<&osrkit::report::PlotRow> =
            rows.iter().filter(|r| r.regime == Regime::Well).collect();
        for w in well.windows(2) {
            match metric.direction() {
                Direction::LowerBetter => assert!(w[0].mean <= w[1].mean),
                Direction::HigherBetter => assert!(w[0].mean >= w[1].mean),
            }
        }
    }
}

#[test]
fn report_round_trips_and_depends_on_the_seed() {
    let config = small(vec![Method::Saliency, Method::SmoothGrad], 1);
    let a = run_experiment(&config).unwrap().report;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(REPORT_FILE);
    write_report(&path, &a).unwrap();
    assert_eq!(read_report(&path).unwrap(), a);

    let mut text = std::fs::read_to_string(&path).unwrap();
    text = text.replacen("\"schema_version\": 1", "\"schema_version\": 99", 1);
    assert!(ReportFile::from_json(&text).is_err());

    let other = ExperimentConfig {
        master_seed: 1,
        ..config
    };
    let b = run_experiment(&other).unwrap().report;
    assert_ne!(a.models[0].params_digest, b.models[0].params_digest);
}

#[test]
fn progress_events_cover_every_cell() {
    let config = small(vec![Method::Saliency], 2);
    let data = load_data(&config).unwrap();
    let (mut trained, mut evaluated, mut selected) = (0, 0, 0);
    run_with_data(&config, &data, &mut |e| match e {
        Event::Trained { .. } => trained += 1,
        Event::Selected { .. } => selected += 1,
        Event::Evaluated { done, total, .. } => {
            evaluated += 1;
            assert!(done <= total);
        }
    })
    .unwrap();
    assert_eq!((trained, selected, evaluated), (2, 1, 4));
}
