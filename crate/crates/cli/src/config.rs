//! Run configuration: one JSON file with `dataset`, `model`, `schedule`,
//! `optimizer`, `run`, `sweep` and `diagnose` sections. Only `dataset.kind`
//! and `dataset.path` are required.

use std::path::{Path, PathBuf};

use mlmc_core::datagen::DatasetKind;
use mlmc_core::mlmc::{AllocationStrategy, SamplingStrategy};
use mlmc_core::optim::OptimizerConfig;
use mlmc_core::sweep::SweepConfig;
use mlmc_core::ModelConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

const REQUIRED: [(&str, &str); 2] = [("dataset", "kind"), ("dataset", "path")];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSection {
    pub kind: DatasetKind,
    pub path: PathBuf,
    #[serde(default = "defaults::n_samples")]
    pub n_samples: usize,
    /// Points per side of the finest grid, `2^p + 1`.
    #[serde(default = "defaults::fine_resolution")]
    pub fine_resolution: usize,
    #[serde(default = "defaults::levels")]
    pub levels: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::grf_shift")]
    pub grf_shift: f64,
    #[serde(default = "defaults::grf_exponent")]
    pub grf_exponent: f64,
    #[serde(default = "defaults::solver_tol")]
    pub solver_tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    #[serde(flatten)]
    pub config: ModelConfig,
    /// Fit input/output normalization on the training split.
    pub normalize: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { config: ModelConfig::default(), normalize: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleSection {
    /// Number of levels, counted down from `resolution`.
    pub m: usize,
    /// Finest training resolution; the dataset's finest when absent.
    pub resolution: Option<usize>,
    pub delta: f64,
    pub finest_batch: usize,
    /// Geometric in `delta` when absent.
    pub allocation: Option<AllocationStrategy>,
    pub sampling: SamplingStrategy,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            m: 3,
            resolution: None,
            delta: 2.0,
            finest_batch: 1,
            allocation: None,
            sampling: SamplingStrategy::Random,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSection {
    pub epochs: usize,
    pub seed: u64,
    /// Score the test split every this many epochs; 0 scores the last only.
    pub eval_every: usize,
    /// Continue from this checkpoint.
    pub resume: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { epochs: 50, seed: 0, eval_every: 1, resume: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnoseSection {
    /// Defaults to `<out>/checkpoint.bin`.
    pub checkpoint: Option<PathBuf>,
    /// Samples used for the variance profile and pair-term magnitudes.
    pub n_probe: usize,
    /// Batches from one plan used for the gradient comparison.
    pub batches: usize,
}

impl Default for DiagnoseSection {
    fn default() -> Self {
        Self { checkpoint: None, n_probe: 16, batches: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub dataset: DatasetSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub diagnose: DiagnoseSection,
}

mod defaults {
    pub fn n_samples() -> usize {
        1024
    }
    pub fn fine_resolution() -> usize {
        65
    }
    pub fn levels() -> usize {
        3
    }
    pub fn grf_shift() -> f64 {
        9.0
    }
    pub fn grf_exponent() -> f64 {
        2.0
    }
    pub fn solver_tol() -> f64 {
        1e-10
    }
}

impl Config {
    pub fn from_str(text: &str) -> Result<Self, CliError> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("not valid JSON: {e}")))?;
        for (section, key) in REQUIRED {
            if value.get(section).and_then(|s| s.get(key)).is_none() {
                return Err(CliError::Config(format!("missing required key `{section}.{key}`")));
            }
        }
        serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Relative paths inside the file resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.dataset.path);
        if let Some(p) = config.run.resume.as_mut() {
            resolve(p);
        }
        if let Some(p) = config.diagnose.checkpoint.as_mut() {
            resolve(p);
        }
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = Config::from_str(r#"{"dataset": {"kind": "darcy", "path": "d.bin"}}"#).unwrap();
        assert_eq!(c.dataset.n_samples, 1024);
        assert_eq!(c.dataset.fine_resolution, 65);
        assert_eq!(c.model.config, ModelConfig::default());
        assert!(c.model.normalize);
        assert_eq!(c.schedule.m, 3);
        assert_eq!(c.run.epochs, 50);
    }

    #[test]
    fn missing_key_is_named() {
        let err = Config::from_str(r#"{"dataset": {"path": "d.bin"}}"#).unwrap_err();
        assert!(err.to_string().contains("dataset.kind"), "{err}");
        let err = Config::from_str(r#"{"dataset": {"kind": "darcy"}}"#).unwrap_err();
        assert!(err.to_string().contains("dataset.path"), "{err}");
    }

    #[test]
    fn flattened_model_keys() {
        let c = Config::from_str(
            r#"{"dataset": {"kind": "synthetic1d", "path": "d.bin"},
                "model": {"dim": 1, "width": 4, "normalize": false},
                "schedule": {"allocation": {"prescribed": {"counts": [8, 4]}}}}"#,
        )
        .unwrap();
        assert_eq!((c.model.config.dim, c.model.config.width), (1, 4));
        assert!(!c.model.normalize);
        assert_eq!(
            c.schedule.allocation,
            Some(AllocationStrategy::Prescribed { counts: vec![8, 4] })
        );
    }
}
