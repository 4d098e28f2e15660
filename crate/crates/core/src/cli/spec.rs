//! Experiment files: a run config, one dataset source, outputs and an optional sweep grid.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{Method, RunConfig};

use super::dataset::DatasetSource;

/// Which files a run writes besides `metrics.json` and `per_class.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmitFlags {
    pub checkpoints: bool,
    /// One checkpoint per stored snapshot, needed by `bound-check --run`.
    pub snapshots: bool,
    pub history: bool,
    pub regret: bool,
}

impl Default for EmitFlags {
    fn default() -> Self {
        Self {
            checkpoints: true,
            snapshots: false,
            history: true,
            regret: true,
        }
    }
}

/// Cartesian grid over run settings; empty axes keep the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepGrid {
    pub method: Vec<Method>,
    pub gamma: Vec<f64>,
    pub eta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub seed: Vec<u64>,
}

impl SweepGrid {
    /// Expands the grid in `method, gamma, eta, alpha, seed` order.
    pub fn expand(&self, base: &RunConfig) -> Vec<RunConfig> {
        fn axis<T: Copy>(values: &[T], base: T) -> Vec<T> {
            if values.is_empty() {
                vec![base]
            } else {
                values.to_vec()
            }
        }
        let some = |v: &[f64], b: Option<f64>| -> Vec<Option<f64>> {
            if v.is_empty() {
                vec![b]
            } else {
                v.iter().map(|&x| Some(x)).collect()
            }
        };
        let mut out = Vec::new();
        for method in axis(&self.method, base.method) {
            for gamma in some(&self.gamma, base.gamma) {
                for eta in some(&self.eta, base.eta) {
                    for alpha in some(&self.alpha, base.alpha) {
                        for seed in axis(&self.seed, base.seed) {
                            out.push(RunConfig {
                                method,
                                gamma,
                                eta,
                                alpha,
                                seed,
                                ..base.clone()
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub run: RunConfig,
    pub dataset: DatasetSource,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub emit: EmitFlags,
    #[serde(default)]
    pub sweep: Option<SweepGrid>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentSpec {
    /// Parses JSON; errors name the offending path, e.g. `run.train_attack.epsilon`.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::InvalidConfig(format!("{path}: {}", e.into_inner()))
        })
    }

    /// Reads a spec file. Relative dataset paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        let spec = Self::from_json(&text)?;
        let base = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        Ok((spec, base))
    }

    /// Copy with dataset paths joined onto `base` and made absolute, so the
    /// spec can be reloaded from anywhere.
    pub fn resolved(&self, base: &Path) -> Result<Self> {
        let abs = |p: &Path| std::path::absolute(base.join(p)).map_err(Error::from);
        let dataset = match &self.dataset {
            DatasetSource::Csv { path } => DatasetSource::Csv { path: abs(path)? },
            DatasetSource::Idx {
                images,
                labels,
                limit_per_class,
            } => DatasetSource::Idx {
                images: abs(images)?,
                labels: abs(labels)?,
                limit_per_class: *limit_per_class,
            },
            other => other.clone(),
        };
        Ok(Self {
            dataset,
            ..self.clone()
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }
}
