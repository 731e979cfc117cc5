//! TOML experiment configuration. Every training hyperparameter has the
//! reference default pre-filled; the config only needs to state what an
//! experiment changes.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::bench::{CsvSchema, Scenario};
use crate::models::{BatchSize, ModelKind};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config {path}: {message}")]
    Invalid { path: String, message: String },
    #[error("config {path}: {source}")]
    Parse { path: String, source: toml::de::Error },
    #[error("config {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Synthetic,
    Csv,
    CsvDir,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub source: SourceKind,
    #[serde(default)]
    pub scenario: Option<Scenario>,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub d: Option<usize>,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub allow_off_grid: bool,
    /// Single CSV file (source = "csv").
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Directory of per-replication CSV files (source = "csv_dir").
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// Column bindings; inferred from the header when omitted.
    #[serde(default)]
    pub schema: Option<CsvSchema>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphSourceKind {
    Discover,
    File,
    Forbidden,
    FullyConnected,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphConfig {
    pub source: GraphSourceKind,
    #[serde(default)]
    pub file: Option<PathBuf>,
    /// Used when discovery fails and no earlier replication succeeded.
    #[serde(default)]
    pub fallback_file: Option<PathBuf>,
    #[serde(default = "default_prune_threshold")]
    pub prune_threshold: f64,
    #[serde(default)]
    pub forbidden: Vec<(String, String)>,
}

fn default_prune_threshold() -> f64 {
    crate::discovery::DEFAULT_PRUNE_THRESHOLD
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            source: GraphSourceKind::Discover,
            file: None,
            fallback_file: None,
            prune_threshold: default_prune_threshold(),
            forbidden: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub constrained: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_one")]
    pub replications: usize,
    /// Extra model-seed repeats per data split.
    #[serde(default = "default_one")]
    pub seed_repeats: usize,
    #[serde(default = "default_split")]
    pub split: (f64, f64, f64),
    #[serde(default)]
    pub master_seed: u64,
    pub out_dir: PathBuf,
    /// Worker threads for replication-level parallelism; 0 = all cores.
    #[serde(default)]
    pub jobs: usize,
}

fn default_one() -> usize {
    1
}

fn default_split() -> (f64, f64, f64) {
    (0.7, 0.2, 0.1)
}

/// Batch size in the config: a count or the string "full".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BatchConfig {
    Count(usize),
    Marker(String),
}

impl BatchConfig {
    pub fn to_batch_size(&self) -> Result<BatchSize, String> {
        match self {
            BatchConfig::Count(n) if *n >= 1 => Ok(BatchSize::Fixed(*n)),
            BatchConfig::Count(n) => Err(format!("batch_size must be >= 1, got {n}")),
            BatchConfig::Marker(m) if m == "full" => Ok(BatchSize::FullSet),
            BatchConfig::Marker(m) => Err(format!("unknown batch_size marker {m:?}")),
        }
    }
}

/// Training overrides; unset fields keep the per-kind reference defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default)]
    pub trunk_width: Option<usize>,
    #[serde(default)]
    pub trunk_depth: Option<usize>,
    #[serde(default)]
    pub head_width: Option<usize>,
    #[serde(default)]
    pub head_depth: Option<usize>,
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub momentum: Option<f64>,
    #[serde(default)]
    pub batch_size: Option<BatchConfig>,
    #[serde(default)]
    pub max_epochs: Option<usize>,
    #[serde(default)]
    pub patience: Option<usize>,
    #[serde(default)]
    pub l2: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub graph: GraphConfig,
    pub models: Vec<ModelConfig>,
    pub run: RunConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<ExperimentConfig, ConfigError> {
        let pstr = path.display().to_string();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: pstr.clone(), source })?;
        let cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|source| ConfigError::Parse { path: pstr.clone(), source })?;
        cfg.validate(&pstr)?;
        Ok(cfg)
    }

    pub fn validate(&self, path: &str) -> Result<(), ConfigError> {
        let fail = |message: String| ConfigError::Invalid { path: path.to_string(), message };
        if self.models.is_empty() {
            return Err(fail("at least one [[models]] entry is required".into()));
        }
        if self.run.replications == 0 || self.run.seed_repeats == 0 {
            return Err(fail("replications and seed_repeats must be >= 1".into()));
        }
        let (a, b, c) = self.run.split;
        if a <= 0.0 || b <= 0.0 || c <= 0.0 || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(fail(format!("split ratios ({a}, {b}, {c}) must be positive and sum to 1")));
        }
        match self.dataset.source {
            SourceKind::Synthetic => {
                if self.dataset.scenario.is_none() {
                    return Err(fail("synthetic dataset needs `scenario`".into()));
                }
                if self.dataset.n.is_none() || self.dataset.d.is_none() {
                    return Err(fail("synthetic dataset needs `n` and `d`".into()));
                }
            }
            SourceKind::Csv => {
                if self.dataset.path.is_none() {
                    return Err(fail("csv dataset needs `path`".into()));
                }
            }
            SourceKind::CsvDir => {
                if self.dataset.dir.is_none() {
                    return Err(fail("csv_dir dataset needs `dir`".into()));
                }
            }
        }
        match self.graph.source {
            GraphSourceKind::File if self.graph.file.is_none() => {
                return Err(fail("graph source `file` needs `file`".into()));
            }
            GraphSourceKind::Forbidden if self.graph.forbidden.is_empty() => {
                return Err(fail("graph source `forbidden` needs `forbidden` pairs".into()));
            }
            _ => {}
        }
        if let Some(b) = &self.train.batch_size {
            b.to_batch_size().map_err(fail)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[dataset]
source = "synthetic"
scenario = "C"
n = 1000
d = 6
sigma = 0.5

[[models]]
kind = "dragonnet"
constrained = true

[[models]]
kind = "dragonnet"
constrained = false

[run]
replications = 2
out_dir = "out"
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg: ExperimentConfig = toml::from_str(MINIMAL).unwrap();
        cfg.validate("test").unwrap();
        assert_eq!(cfg.run.split, (0.7, 0.2, 0.1));
        assert_eq!(cfg.run.seed_repeats, 1);
        assert_eq!(cfg.graph.source, GraphSourceKind::Discover);
        assert_eq!(cfg.graph.prune_threshold, 0.1);
        assert!(cfg.train.learning_rate.is_none());
    }

    #[test]
    fn batch_size_accepts_count_or_full() {
        let toml_text = format!("{MINIMAL}\n[train]\nbatch_size = 64\n");
        let cfg: ExperimentConfig = toml::from_str(&toml_text).unwrap();
        assert_eq!(
            cfg.train.batch_size.unwrap().to_batch_size().unwrap(),
            BatchSize::Fixed(64)
        );
        let toml_text = format!("{MINIMAL}\n[train]\nbatch_size = \"full\"\n");
        let cfg: ExperimentConfig = toml::from_str(&toml_text).unwrap();
        assert_eq!(
            cfg.train.batch_size.unwrap().to_batch_size().unwrap(),
            BatchSize::FullSet
        );
    }

    #[test]
    fn invalid_configs_are_rejected_with_reasons() {
        let mut cfg: ExperimentConfig = toml::from_str(MINIMAL).unwrap();
        cfg.models.clear();
        assert!(matches!(cfg.validate("p"), Err(ConfigError::Invalid { .. })));

        let mut cfg: ExperimentConfig = toml::from_str(MINIMAL).unwrap();
        cfg.run.split = (0.5, 0.2, 0.2);
        assert!(cfg.validate("p").is_err());

        let mut cfg: ExperimentConfig = toml::from_str(MINIMAL).unwrap();
        cfg.dataset.scenario = None;
        assert!(cfg.validate("p").is_err());
    }
}
