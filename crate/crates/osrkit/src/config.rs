//! Experiment configuration, read from TOML.
//!
//! Every field has a default, so an empty file is a valid configuration.
//! Per-stage `seed` fields inside nested sections are ignored: each stage
//! receives `derive_seed(master_seed, label, index)` instead (see
//! [`crate::experiment::seeds`]).

use std::path::{Path, PathBuf};

use osrkit_core::attribution::{AttributionConfig, Method};
use osrkit_core::gan::GanTrainConfig;
use osrkit_core::metrics::{FidelityConfig, OsrConfig, SensitivityConfig, SrConfig};
use osrkit_core::similar::NoiseKind;
use osrkit_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Mnist,
    SyntheticBlobs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlobsConfig {
    pub classes: usize,
    pub dims: usize,
    /// Training samples; the test split gets a quarter as many.
    pub n: usize,
    pub separation: f64,
}

impl Default for BlobsConfig {
    fn default() -> Self {
        Self {
            classes: 3,
            dims: 16,
            n: 4000,
            separation: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DatasetKind,
    /// MNIST directory; defaults to `$OSRKIT_DATA_DIR/mnist` or `data/mnist`.
    pub dir: Option<PathBuf>,
    pub blobs: BlobsConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            source: DatasetKind::Mnist,
            dir: None,
            blobs: BlobsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    /// Hidden widths; input and output widths come from the data.
    pub hidden: Vec<usize>,
    pub well: TrainConfig,
    pub bad: TrainConfig,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 128],
            well: TrainConfig::well(),
            bad: TrainConfig::bad(),
        }
    }
}

/// Reference image shared by integrated gradients, DeepLift and fidelity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// All zeros.
    Black,
    /// Per-pixel mean of the training split.
    DatasetMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeighborhoodConfig {
    /// Candidates drawn from each GAN.
    pub gan_candidates: usize,
    /// Candidates drawn for each noise neighbourhood.
    pub noise_candidates: usize,
    pub uniform_half_width: f64,
    pub normal_std: f64,
}

impl Default for NeighborhoodConfig {
    fn default() -> Self {
        Self {
            gan_candidates: 1000,
            noise_candidates: 1000,
            uniform_half_width: 0.05,
            normal_std: 0.03,
        }
    }
}

impl NeighborhoodConfig {
    pub fn uniform(&self) -> NoiseKind {
        NoiseKind::Uniform {
            half_width: self.uniform_half_width,
        }
    }

    pub fn normal(&self) -> NoiseKind {
        NoiseKind::Normal {
            std: self.normal_std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    /// Number of test images evaluated.
    pub input_count: usize,
    pub methods: Vec<Method>,
    pub baseline: BaselineKind,
    pub dataset: DatasetConfig,
    pub classifier: ClassifierConfig,
    pub attribution: AttributionConfig,
    pub gan: GanTrainConfig,
    pub neighborhood: NeighborhoodConfig,
    pub osr: OsrConfig,
    pub sensitivity: SensitivityConfig,
    pub fidelity: FidelityConfig,
    pub sr: SrConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            input_count: 20,
            methods: Method::ALL.to_vec(),
            baseline: BaselineKind::Black,
            dataset: DatasetConfig::default(),
            classifier: ClassifierConfig::default(),
            attribution: AttributionConfig::default(),
            gan: GanTrainConfig::default(),
            neighborhood: NeighborhoodConfig::default(),
            osr: OsrConfig::default(),
            sensitivity: SensitivityConfig::default(),
            fidelity: FidelityConfig::default(),
            sr: SrConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        config.validate(path)?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is representable in TOML")
    }

    /// Range checks that do not need the data.
    pub fn validate(&self, path: &Path) -> Result<()> {
        let fail = |message: String| Error::Config {
            path: path.to_path_buf(),
            message,
        };
        if self.input_count == 0 {
            return Err(fail("input_count must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(fail("methods must not be empty".into()));
        }
        let mut seen = self.methods.clone();
        seen.sort_by_key(|m| m.id());
        seen.dedup();
        if seen.len() != self.methods.len() {
            return Err(fail("methods must not repeat".into()));
        }
        if self.neighborhood.gan_candidates == 0 || self.neighborhood.noise_candidates == 0 {
            return Err(fail(
                "neighbourhood candidate counts must be at least 1".into(),
            ));
        }
        let checks = [
            self.classifier.well.validate(),
            self.classifier.bad.validate(),
            self.attribution.validate(),
            self.gan.validate(),
            self.osr.similarity.validate(),
            self.sensitivity.validate(),
        ];
        for c in checks {
            c.map_err(|e| fail(e.to_string()))?;
        }
        if self.classifier.hidden.contains(&0) {
            return Err(fail("hidden widths must be positive".into()));
        }
        Ok(())
    }
}
