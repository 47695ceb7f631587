use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Failure;
use crate::data::Modality;
use crate::dsp::PreprocessConfig;
use crate::harness::{SettingKind, SweepGrid, TrainConfig};
use crate::model::ModelConfig;

/// Environment variable naming the directory that relative dataset paths
/// (and `generate` output) resolve against.
pub const DATA_ROOT_ENV: &str = "SLEEPNET_DATA";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRef {
    pub path: PathBuf,
    /// Defaults to the directory name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Record directory names to keep.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub records: Option<Vec<String>>,
    /// Channel modalities to keep.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modalities: Option<Vec<Modality>>,
}

impl DatasetRef {
    pub fn resolved_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            self.path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| self.path.display().to_string())
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub grid: SweepGrid,
    #[serde(default = "one")]
    pub repetitions: usize,
    #[serde(default = "default_evaluation_fraction")]
    pub evaluation_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lfs_baseline: Option<f64>,
}

fn one() -> usize {
    1
}

fn default_evaluation_fraction() -> f64 {
    0.3
}

fn default_folds() -> usize {
    5
}

/// One run, as a single JSON document. Missing sections take their
/// defaults; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub datasets: Vec<DatasetRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setting: Option<SettingKind>,
    /// Dataset names trained on in direct transfer.
    #[serde(default)]
    pub sources: Vec<String>,
    /// Dataset evaluated on; defaults to the only dataset when there is one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl RunConfig {
    /// Parses and validates a config document. A learning rate left out
    /// of `train` follows the setting (1e-4 for finetuning).
    pub fn parse(text: &str, setting_override: Option<SettingKind>) -> Result<RunConfig, Failure> {
        let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| Failure::config(format!("config: {e}")))?;
        let lr_given = raw.get("train").and_then(|t| t.get("learning_rate")).is_some();
        let mut cfg: RunConfig = serde_json::from_value(raw).map_err(|e| Failure::config(format!("config: {e}")))?;
        if let Some(s) = setting_override {
            cfg.setting = Some(s);
        }
        if !lr_given {
            if let Some(s) = cfg.setting {
                cfg.train.learning_rate = s.default_learning_rate();
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Failure> {
        self.model.validate().map_err(|e| Failure::config(e.to_string()))?;
        self.preprocess.validate().map_err(|e| Failure::config(e.to_string()))?;
        crate::model::check_compatible(&self.model, &self.preprocess).map_err(|e| Failure::config(e.to_string()))?;
        self.train.validate().map_err(|e| Failure::config(e.to_string()))?;
        if self.datasets.is_empty() {
            return Err(Failure::config("datasets: at least one dataset is required"));
        }
        let names: Vec<String> = self.datasets.iter().map(DatasetRef::resolved_name).collect();
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Failure::config(format!("datasets: name {n:?} appears twice")));
            }
        }
        for s in self.sources.iter().chain(&self.target) {
            if !names.contains(s) {
                return Err(Failure::config(format!("dataset {s:?} is not listed under datasets")));
            }
        }
        if self.folds < 2 {
            return Err(Failure::config(format!("folds: need at least 2, got {}", self.folds)));
        }
        if self.setting == Some(SettingKind::DT) {
            if self.sources.is_empty() {
                return Err(Failure::config("sources: direct transfer needs at least one source dataset"));
            }
            if let Some(t) = &self.target {
                if self.sources.contains(t) {
                    return Err(Failure::config(format!("target {t:?} is also a source")));
                }
            }
        }
        if let Some(s) = &self.sweep {
            if s.grid.is_empty() {
                return Err(Failure::config("sweep.grid: no points"));
            }
            if s.repetitions == 0 {
                return Err(Failure::config("sweep.repetitions: must be positive"));
            }
            if !(s.evaluation_fraction > 0.0 && s.evaluation_fraction < 1.0) {
                return Err(Failure::config("sweep.evaluation_fraction: must lie in (0, 1)"));
            }
        }
        Ok(())
    }

    /// Name of the dataset evaluated on.
    pub fn target_name(&self) -> Result<String, Failure> {
        match (&self.target, self.datasets.len()) {
            (Some(t), _) => Ok(t.clone()),
            (None, 1) => Ok(self.datasets[0].resolved_name()),
            (None, _) => Err(Failure::config("target: required when several datasets are listed")),
        }
    }

    pub fn dataset(&self, name: &str) -> Result<&DatasetRef, Failure> {
        self.datasets
            .iter()
            .find(|d| d.resolved_name() == name)
            .ok_or_else(|| Failure::config(format!("dataset {name:?} is not listed")))
    }
}

/// Relative paths resolve against the data root when it is set.
pub fn resolve_path(path: &Path) -> PathBuf {
    match std::env::var_os(DATA_ROOT_ENV) {
        Some(root) if path.is_relative() => Path::new(&root).join(path),
        _ => path.to_path_buf(),
    }
}
