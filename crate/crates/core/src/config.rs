//! Run configuration: one JSON document plus `--set key=value` overrides.
//!
//! Unknown keys are rejected at every level. After loading, defaults that
//! depend on the model (optimizer, learning rate) are filled in and the
//! single root seed is pushed into the data and training sections, giving
//! the resolved form that runs write next to their outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{GroundTruthTask, Labeling};
use crate::lm::{ModelSpec, Vocab};
use crate::losses::LossConfig;
use crate::trainer::{OptimizerKind, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("invalid override {0:?}: expected key=value")]
    BadOverride(String),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Neural,
    Ngram,
}

fn default_context() -> usize {
    8
}
fn default_embed() -> usize {
    16
}
fn default_hidden() -> usize {
    16
}
fn default_order() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default)]
    pub kind: ModelKind,
    pub vocab_size: usize,
    #[serde(default = "default_context")]
    pub context: usize,
    #[serde(default = "default_embed")]
    pub embed_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
    /// n-gram order; ignored by the neural model.
    #[serde(default = "default_order")]
    pub order: usize,
}

impl ModelSection {
    pub fn spec(&self) -> ModelSpec {
        match self.kind {
            ModelKind::Neural => ModelSpec::Neural {
                context: self.context,
                embed_dim: self.embed_dim,
                hidden_dim: self.hidden_dim,
            },
            ModelKind::Ngram => ModelSpec::Ngram { order: self.order },
        }
    }
}

/// Training section. `optimizer` and `lr` default per model kind: adam at
/// 1e-2 for the neural model, sgd at 0.5 for n-gram tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub optimizer: Option<OptimizerKind>,
    pub lr: Option<f64>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub eval_every: usize,
    pub checkpoint_every: Option<usize>,
    pub cache_reference: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            optimizer: None,
            lr: None,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_eps: t.adam_eps,
            steps: t.steps,
            batch_size: t.batch_size,
            eval_every: t.eval_every,
            checkpoint_every: t.checkpoint_every,
            cache_reference: t.cache_reference,
        }
    }
}

fn default_n_pairs() -> usize {
    256
}
fn default_smoothing() -> f64 {
    1.0
}

/// Either an existing JSONL dataset or a synthetic task to sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub task: GroundTruthTask,
    #[serde(default = "default_n_pairs")]
    pub n_pairs: usize,
    #[serde(default)]
    pub labeling: Labeling,
    /// Attach rejected-token scores when sampling. Always on when the loss
    /// is weighted.
    #[serde(default)]
    pub token_scores: bool,
    /// Additive smoothing of the two count-fitted score models.
    #[serde(default = "default_smoothing")]
    pub score_smoothing: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            path: None,
            task: GroundTruthTask::default(),
            n_pairs: default_n_pairs(),
            labeling: Labeling::default(),
            token_scores: false,
            score_smoothing: default_smoothing(),
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub data: DataSection,
    /// Root of every random stream in the run.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl RunConfig {
    /// Parse, apply overrides, resolve defaults and validate.
    pub fn from_json(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: Value =
            serde_json::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut cfg: RunConfig =
            serde_json::from_value(doc).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.resolve()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text, overrides)
    }

    fn resolve(&mut self) -> Result<()> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        let kind = self.model.kind;
        self.train.optimizer.get_or_insert(match kind {
            ModelKind::Neural => OptimizerKind::Adam,
            ModelKind::Ngram => OptimizerKind::Sgd,
        });
        self.train.lr.get_or_insert(match kind {
            ModelKind::Neural => 1e-2,
            ModelKind::Ngram => 0.5,
        });
        if self.data.task.seed != 0 && self.data.task.seed != self.seed {
            return invalid(format!(
                "data.task.seed ({}) conflicts with the root seed ({}); set only `seed`",
                self.data.task.seed, self.seed
            ));
        }
        self.data.task.seed = self.seed;
        if self.data.path.is_none() && self.data.task.vocab_size != self.model.vocab_size {
            return invalid(format!(
                "data.task.vocab_size ({}) differs from model.vocab_size ({})",
                self.data.task.vocab_size, self.model.vocab_size
            ));
        }
        if self.data.path.is_none() && self.data.n_pairs == 0 {
            return invalid("data.n_pairs must be at least 1".into());
        }
        if !(self.data.score_smoothing > 0.0) {
            return invalid("data.score_smoothing must be positive".into());
        }
        Vocab::new(self.model.vocab_size).map_err(|e| ConfigError::Invalid(format!("model.vocab_size: {e}")))?;
        let m = &self.model;
        if m.context == 0 || m.embed_dim == 0 || m.hidden_dim == 0 || m.order == 0 {
            return invalid("model context, embed_dim, hidden_dim and order must be positive".into());
        }
        self.loss.validate().map_err(|e| ConfigError::Invalid(format!("loss: {e}")))?;
        self.train_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("train: {e}")))?;
        if self.data.path.is_none() {
            self.data
                .task
                .validate()
                .map_err(|e| ConfigError::Invalid(format!("data.task: {e}")))?;
        }
        Ok(())
    }

    pub fn vocab(&self) -> Vocab {
        Vocab::new(self.model.vocab_size).expect("validated in resolve")
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            optimizer: t.optimizer.unwrap_or(OptimizerKind::Adam),
            lr: t.lr.unwrap_or(1e-2),
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_eps: t.adam_eps,
            steps: t.steps,
            batch_size: t.batch_size,
            seed: self.seed,
            eval_every: t.eval_every,
            checkpoint_every: t.checkpoint_every,
            cache_reference: t.cache_reference,
        }
    }

    /// Whether sampled datasets carry rejected-token scores.
    pub fn wants_scores(&self) -> bool {
        self.data.token_scores || self.loss.weighted
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// SHA-256 of the resolved config without `output_dir`, so the same
    /// experiment hashes identically wherever it is written.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(map) = &mut v {
            map.remove("output_dir");
        }
        let canonical = serde_json::to_string(&v).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

/// `a.b.c=value`; the value is parsed as JSON when possible, else taken as a
/// string.
pub fn apply_override(doc: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::BadOverride(spec.to_string()))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(ConfigError::BadOverride(spec.to_string()));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let map = match cur {
            Value::Object(m) => m,
            _ => {
                return Err(ConfigError::Invalid(format!(
                    "override {key}: {} is not an object",
                    parts[..i].join(".")
                )))
            }
        };
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        cur = map
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("key has at least one part")
}
