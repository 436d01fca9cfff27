//! Run configuration: a JSON file mirroring the command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::harness::noise::{DEFAULT_MASK_PROB, DEFAULT_MASK_TOKEN};
use crate::harness::{default_warmup, QualityConfig};
use crate::probe::{ProbeConfig, TinyLmConfig, TrainConfig};
use crate::select::Method;

pub const DEFAULT_OUT_DIR: &str = "donod-out";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Copied into every seeded component when the config is resolved.
    pub seed: u64,
    pub probe: ProbeConfig,
    pub model: TinyLmConfig,
    pub warmup: WarmupConfig,
    pub selection: SelectionConfig,
    pub paths: PathsConfig,
    pub noise: NoiseConfig,
    pub quality: QualityConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WarmupConfig {
    /// Clean JSONL the probe model is trained on before scoring.
    pub dataset: Option<PathBuf>,
    pub train: TrainConfig,
}

impl Default for WarmupConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            train: default_warmup(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub method: Method,
    pub ratio: f64,
    pub weight: Option<f64>,
    pub reverse: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            method: Method::Topsis,
            ratio: 0.2,
            weight: None,
            reverse: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub dataset: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub mask_prob: f64,
    pub mask_token: String,
    /// Size of the synthetic corpus used when no dataset is given.
    pub n_samples: usize,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            mask_prob: DEFAULT_MASK_PROB,
            mask_token: DEFAULT_MASK_TOKEN.to_string(),
            n_samples: 500,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    /// Propagates `seed` and checks ranges.
    pub fn resolve(mut self) -> Result<Self, CliError> {
        self.probe.seed = self.seed;
        self.model.seed = self.seed;
        self.warmup.train.seed = self.seed;
        self.quality.probe.learning_rate = self.probe.learning_rate;
        self.quality.ratio = self.selection.ratio;
        if let Some(w) = self.selection.weight {
            self.quality.weight = w;
        }
        let ratio = self.selection.ratio;
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(CliError::Usage(format!("ratio must be in (0, 1], got {ratio}")));
        }
        if let Some(w) = self.selection.weight {
            if !(0.0..=1.0).contains(&w) {
                return Err(CliError::Usage(format!("weight must be in [0, 1], got {w}")));
            }
        }
        if !(0.0..=1.0).contains(&self.noise.mask_prob) {
            return Err(CliError::Usage(format!(
                "mask-prob must be in [0, 1], got {}",
                self.noise.mask_prob
            )));
        }
        self.probe.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(self)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.paths.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }
}
