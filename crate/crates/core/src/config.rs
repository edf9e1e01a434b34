//! The JSON run configuration and its resolution into engine settings and a
//! concrete backend.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendConfig, BackendError, BuiltinModel, ClassifierBackend, ExternalBackend};
use crate::corpus::{filter_two_class, preprocess, read_corpus, CorpusError};
use crate::engine::EngineConfig;
use crate::selection::{RatioEstimate, ScheduleShape, SelectionStrategy};

pub const SEED_ENV: &str = "SELFTRAIN_SEED";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{0}")]
    Invalid(String),
    #[error("{var}={value:?} is not an unsigned integer")]
    Env { var: &'static str, value: String },
    #[error("source corpus {path}: {source}")]
    Source {
        path: PathBuf,
        #[source]
        source: CorpusError,
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StrategyConfig {
    /// `n_total` defaults to `round(selection_percent * corpus size)`.
    Vanilla {
        #[serde(default)]
        n_total: Option<usize>,
    },
    /// `positive_fraction` defaults to the ratio estimate's p-hat.
    Ratio {
        #[serde(default)]
        positive_fraction: Option<f64>,
        #[serde(default)]
        n_total: Option<usize>,
    },
    Scheduled {
        per_iteration: Vec<usize>,
        #[serde(default)]
        positive_fraction: Option<f64>,
    },
    HtrFiltered {
        min_l2_ratio: f64,
        inner: Box<StrategyConfig>,
    },
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig::Vanilla { n_total: None }
    }
}

impl StrategyConfig {
    fn resolve(&self, default_total: usize, estimate: Option<&RatioEstimate>) -> Result<SelectionStrategy, ConfigError> {
        let fraction = |f: Option<f64>| {
            f.or(estimate.map(|e| e.p_positive_hat))
                .ok_or_else(|| ConfigError::Invalid("ratio strategy needs positive_fraction or a ratio_estimate".into()))
        };
        Ok(match self {
            StrategyConfig::Vanilla { n_total } => SelectionStrategy::Vanilla { n_total: n_total.unwrap_or(default_total) },
            StrategyConfig::Ratio { positive_fraction, n_total } => SelectionStrategy::Ratio {
                positive_fraction: fraction(*positive_fraction)?,
                n_total: n_total.unwrap_or(default_total),
            },
            StrategyConfig::Scheduled { per_iteration, positive_fraction } => SelectionStrategy::Scheduled {
                per_iteration: per_iteration.clone(),
                inner: match positive_fraction {
                    Some(f) => ScheduleShape::Ratio { positive_fraction: *f },
                    None => ScheduleShape::Vanilla,
                },
            },
            StrategyConfig::HtrFiltered { min_l2_ratio, inner } => SelectionStrategy::TokenRatioFiltered {
                min_l2_ratio: *min_l2_ratio,
                inner: Box::new(inner.resolve(default_total, estimate)?),
            },
        })
    }
}

fn default_learning_rate() -> f64 {
    BackendConfig::default().learning_rate
}
fn default_hash_dim() -> usize {
    BackendConfig::default().hash_dim
}
fn default_ngram_max() -> usize {
    BackendConfig::default().ngram_max
}
fn default_batch_size() -> usize {
    BackendConfig::default().batch_size
}
fn default_pretrain_epochs() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BackendSettings {
    Builtin {
        #[serde(default = "default_learning_rate")]
        learning_rate: f64,
        #[serde(default = "default_hash_dim")]
        hash_dim: usize,
        #[serde(default = "default_ngram_max")]
        ngram_max: usize,
        /// Defaults to the run seed.
        #[serde(default)]
        seed: Option<u64>,
        /// Labeled corpus in the matrix language used for pre-training,
        /// relative to the config file.
        #[serde(default)]
        source: Option<PathBuf>,
        #[serde(default = "default_pretrain_epochs")]
        pretrain_epochs: usize,
    },
    External {
        cmd: Vec<String>,
        #[serde(default = "default_batch_size")]
        batch_size: usize,
    },
}

impl Default for BackendSettings {
    fn default() -> Self {
        BackendSettings::Builtin {
            learning_rate: default_learning_rate(),
            hash_dim: default_hash_dim(),
            ngram_max: default_ngram_max(),
            seed: None,
            source: None,
            pretrain_epochs: default_pretrain_epochs(),
        }
    }
}

fn default_percent() -> f64 {
    0.05
}
fn default_epochs() -> usize {
    1
}
fn default_seed() -> u64 {
    42
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub strategy: StrategyConfig,
    #[serde(default = "default_percent")]
    pub selection_percent: f64,
    #[serde(default = "default_epochs")]
    pub epochs_per_iteration: usize,
    #[serde(default)]
    pub max_iterations: Option<usize>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub backend: BackendSettings,
    #[serde(default)]
    pub ratio_estimate: Option<RatioEstimate>,
    #[serde(default)]
    pub cumulative_retraining: bool,
    #[serde(default = "yes")]
    pub final_fine_tune: bool,
    /// Directory relative paths inside the config resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let mut cfg = Self::from_json(&text).map_err(|source| ConfigError::Json { path: path.into(), source })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `SELFTRAIN_SEED` when set.
    pub fn apply_env(&mut self) -> Result<(), ConfigError> {
        if let Ok(value) = std::env::var(SEED_ENV) {
            self.seed = value.trim().parse().map_err(|_| ConfigError::Env { var: SEED_ENV, value })?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.selection_percent > 0.0 && self.selection_percent <= 1.0) {
            return Err(ConfigError::Invalid(format!(
                "selection_percent must be in (0, 1], got {}",
                self.selection_percent
            )));
        }
        if self.epochs_per_iteration == 0 {
            return Err(ConfigError::Invalid("epochs_per_iteration must be at least 1".into()));
        }
        if let BackendSettings::External { cmd, .. } = &self.backend {
            if cmd.is_empty() {
                return Err(ConfigError::Invalid("external backend needs a non-empty cmd".into()));
            }
        }
        Ok(())
    }

    /// `round(selection_percent * corpus_len)`, at least 2.
    pub fn n_total(&self, corpus_len: usize) -> usize {
        ((self.selection_percent * corpus_len as f64).round() as usize).max(2)
    }

    pub fn engine_config(&self, corpus_len: usize) -> Result<EngineConfig, ConfigError> {
        self.validate()?;
        let strategy = self.strategy.resolve(self.n_total(corpus_len), self.ratio_estimate.as_ref())?;
        strategy.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(EngineConfig {
            strategy,
            epochs_per_iteration: self.epochs_per_iteration,
            max_iterations: self.max_iterations,
            ratio_estimate: self.ratio_estimate.clone(),
            cumulative_retraining: self.cumulative_retraining,
            final_fine_tune: self.final_fine_tune,
        })
    }

    /// Settings of the built-in model, or `None` for an external backend.
    pub fn builtin_config(&self) -> Option<BackendConfig> {
        match &self.backend {
            BackendSettings::Builtin { learning_rate, hash_dim, ngram_max, seed, .. } => Some(BackendConfig {
                learning_rate: *learning_rate,
                hash_dim: *hash_dim,
                ngram_max: *ngram_max,
                seed: seed.unwrap_or(self.seed),
                ..BackendConfig::default()
            }),
            BackendSettings::External { .. } => None,
        }
    }

    /// Builds the backend: a built-in model pre-trained on the configured
    /// source corpus, or a spawned external peer.
    pub fn build_backend(&self) -> Result<Box<dyn ClassifierBackend>, ConfigError> {
        match &self.backend {
            BackendSettings::Builtin { source, pretrain_epochs, .. } => {
                let mut model = BuiltinModel::new(self.builtin_config().expect("builtin"))?;
                if let Some(src) = source {
                    let path = self.base_dir.join(src);
                    let raw = read_corpus(&path, None).map_err(|source| ConfigError::Source { path: path.clone(), source })?;
                    let (clean, _) = preprocess(&raw);
                    let (two_class, _) = filter_two_class(&clean);
                    model.pretrain(&two_class, *pretrain_epochs)?;
                } else {
                    log::warn!("built-in backend has no source corpus; starting from zero weights");
                }
                Ok(Box::new(model))
            }
            BackendSettings::External { cmd, batch_size } => Ok(Box::new(ExternalBackend::spawn(cmd, *batch_size)?)),
        }
    }
}
