//! Experiment configuration, read from a TOML file.

use std::path::{Path, PathBuf};

use memotion::dataset::SignalSpec;
use memotion::model::ModelSpec;
use memotion::training::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Every artifact of the run lands here.
    pub output_dir: PathBuf,
    /// Drives model initialisation, shuffling and dropout.
    pub seed: u64,
    pub data: DataConfig,
    pub split: SplitConfig,
    #[serde(default)]
    pub text: TextConfig,
    /// Absent for late-fusion runs.
    #[serde(default)]
    pub model: Option<ModelSpec>,
    /// `seed` inside this table is ignored; the top-level seed wins.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub late: Option<LateConfig>,
    #[serde(default)]
    pub labels: RunLabels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// CSV or JSON-lines manifest.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticData>,
    /// Held-out set to score on; the validation split is used when absent.
    #[serde(default)]
    pub test_manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticData {
    pub n: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub signal: SignalSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub val_fraction: f64,
    pub seed: u64,
    #[serde(default = "yes")]
    pub stratify: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextConfig {
    pub min_count: usize,
    pub max_size: Option<usize>,
}

impl Default for TextConfig {
    fn default() -> Self {
        TextConfig {
            min_count: 1,
            max_size: None,
        }
    }
}

/// Probability averaging over finished runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LateConfig {
    pub runs: Vec<PathBuf>,
    /// Equal weights when absent.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
}

impl LateConfig {
    pub fn weights(&self) -> Vec<f64> {
        self.weights.clone().unwrap_or_else(|| vec![1.0; self.runs.len()])
    }
}

/// Row labels for the results table; derived from the model when absent.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunLabels {
    pub model: Option<String>,
    pub modality: Option<String>,
    pub fusion: Option<String>,
}

impl ExperimentConfig {
    /// Reads `path`; relative paths inside are taken from the file's directory.
    pub fn load(path: impl AsRef<Path>) -> CliResult<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, base).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str, base: &Path) -> CliResult<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.resolve_paths(base);
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        if let Some(p) = &mut self.data.manifest {
            fix(p);
        }
        if let Some(p) = &mut self.data.test_manifest {
            fix(p);
        }
        if let Some(late) = &mut self.late {
            late.runs.iter_mut().for_each(fix);
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn with_output_dir(mut self, dir: PathBuf) -> Self {
        self.output_dir = dir;
        self
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.name.trim().is_empty() {
            return bad("`name` must not be empty");
        }
        match (&self.data.manifest, &self.data.synthetic) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => return bad("set exactly one of `data.manifest` and `data.synthetic`"),
        }
        if !(self.split.val_fraction > 0.0 && self.split.val_fraction < 1.0) {
            return bad("`split.val_fraction` must lie in (0, 1)");
        }
        match (&self.model, &self.late) {
            (Some(model), None) => {
                if model.tasks.is_empty() {
                    return bad("`model.tasks` must name at least one task");
                }
            }
            (None, Some(late)) => {
                if late.runs.len() < 2 {
                    return bad("`late.runs` needs at least two run directories");
                }
                let w = late.weights();
                if w.len() != late.runs.len() || w.iter().any(|&x| !(x >= 0.0)) || w.iter().all(|&x| x == 0.0) {
                    return bad("`late.weights` must be one non-negative weight per run, not all zero");
                }
            }
            _ => return bad("set exactly one of `[model]` and `[late]`"),
        }
        Ok(())
    }

    /// Where `prepare` writes and the other stages read.
    pub fn prepared_dir(&self) -> PathBuf {
        self.output_dir.join("prepared")
    }

    /// SHA-256 of the effective configuration.
    pub fn digest(&self) -> CliResult<String> {
        let json = serde_json::to_vec(self).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(hex::encode(Sha256::digest(&json)))
    }
}
