//! JSON report, timing sidecar and plot-ready CSV.
//!
//! The report holds only deterministic content, so re-running a
//! configuration reproduces it byte for byte. Wall-clock timings go to a
//! separate `timings.json` next to it.

use std::path::{Path, PathBuf};

use osrkit_core::data::Source;
use osrkit_core::metrics::{MetricKind, MetricReport, MetricRow, SkippedCell, Summary};
use osrkit_core::similar::NeighborhoodSource;
use osrkit_core::train::Regime;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::experiment::GeneratorSummary;

pub const SCHEMA_VERSION: u32 = 1;
pub const REPORT_FILE: &str = "report.json";
pub const TIMINGS_FILE: &str = "timings.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub source: Source,
    pub train_len: usize,
    pub test_len: usize,
    pub dim: usize,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub regime: Regime,
    pub seed: u64,
    pub architecture: String,
    pub params_digest: String,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub examples_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodRecord {
    pub source: NeighborhoodSource,
    pub seed: u64,
    pub accepted: usize,
    pub rejected: usize,
    /// Noise neighbourhoods only: share of raw candidates that change class.
    pub misclassification_rate: Option<f64>,
    /// Accepted samples per tenth of `[0, delta]` in logit distance.
    pub logit_deciles: [usize; 10],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolRecord {
    pub seed: u64,
    pub ball: usize,
    pub training: usize,
}

/// What was built for one input under one regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeInputRecord {
    pub regime: Regime,
    pub input_index: usize,
    pub predicted_class: usize,
    pub anchor_logit: f64,
    pub generator_digest: String,
    pub neighborhoods: Vec<NeighborhoodRecord>,
    pub sensitivity_pool: PoolRecord,
}

/// Output of the evaluation stage: raw rows plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub config: ExperimentConfig,
    pub dataset: DatasetRecord,
    pub models: Vec<ModelRecord>,
    /// Test-set indices, in evaluation order.
    pub inputs: Vec<usize>,
    pub generators: Vec<GeneratorSummary>,
    pub evaluations: Vec<RegimeInputRecord>,
    pub rows: Vec<MetricRow>,
    pub skipped: Vec<SkippedCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub dataset: DatasetRecord,
    pub models: Vec<ModelRecord>,
    pub inputs: Vec<usize>,
    pub generators: Vec<GeneratorSummary>,
    pub evaluations: Vec<RegimeInputRecord>,
    pub metrics: MetricReport,
}

impl ReportFile {
    /// Aggregates, ranks and compares the regimes.
    pub fn from_evaluation(e: Evaluation) -> Result<Self> {
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            metrics: MetricReport::build(e.rows, e.skipped)?,
            config: e.config,
            dataset: e.dataset,
            models: e.models,
            inputs: e.inputs,
            generators: e.generators,
            evaluations: e.evaluations,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: Self = serde_json::from_str(text)?;
        if report.schema_version != SCHEMA_VERSION {
            return Err(Error::Config {
                path: PathBuf::from(REPORT_FILE),
                message: format!(
                    "schema version {} (expected {SCHEMA_VERSION})",
                    report.schema_version
                ),
            });
        }
        Ok(report)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub input_index: Option<usize>,
    pub regime: Option<Regime>,
    pub seconds: f64,
}

impl StageTiming {
    pub fn since(
        stage: &str,
        input_index: Option<usize>,
        regime: Option<Regime>,
        start: std::time::Instant,
    ) -> Self {
        Self {
            stage: stage.to_string(),
            input_index,
            regime,
            seconds: start.elapsed().as_secs_f64(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_seconds: f64,
    pub stages: Vec<StageTiming>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_report(path: &Path, report: &ReportFile) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, report.to_json()?).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<ReportFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ReportFile::from_json(&text)
}

/// One line of a plot CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub method: String,
    pub regime: Regime,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Plot rows for one metric: methods in the well regime's order (then any
/// method only the bad regime has), each followed by its regimes.
pub fn plot_rows(report: &ReportFile, metric: MetricKind) -> Vec<PlotRow> {
    let summaries: Vec<&Summary> = report
        .metrics
        .summaries
        .iter()
        .filter(|s| s.metric == metric)
        .collect();
    let mut order: Vec<String> = report
        .metrics
        .ranking(metric, Regime::Well)
        .map(<[String]>::to_vec)
        .unwrap_or_default();
    for m in report
        .metrics
        .ranking(metric, Regime::Bad)
        .unwrap_or_default()
    {
        if !order.contains(m) {
            order.push(m.clone());
        }
    }
    let mut rows = Vec::new();
    for method in &order {
        for regime in Regime::ALL {
            if let Some(s) = summaries
                .iter()
                .find(|s| &s.method == method && s.regime == regime)
            {
                rows.push(PlotRow {
                    method: method.clone(),
                    regime,
                    mean: s.mean,
                    std: s.std,
                    n: s.n,
                });
            }
        }
    }
    rows
}

pub fn plot_path(out_dir: &Path, metric: MetricKind) -> PathBuf {
    out_dir.join(format!("{}.csv", metric.id()))
}

/// Writes `{metric}.csv` for every metric with data; returns the paths.
pub fn emit_plot_data(report: &ReportFile, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for metric in MetricKind::ALL {
        let rows = plot_rows(report, metric);
        if rows.is_empty() {
            continue;
        }
        let path = plot_path(out_dir, metric);
        let mut w = csv::Writer::from_path(&path)?;
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

pub fn read_plot_data(path: &Path) -> Result<Vec<PlotRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
