//! Experiment configuration: a flat TOML document plus `key=value` overrides.
//!
//! Keys:
//!
//! | key | default | meaning |
//! |---|---|---|
//! | `train_dir`, `validation_dir`, `test_dir` | none | split directories of meeting JSON files |
//! | `embedding` | `"hash"` | `hash` or `remote:<model>` |
//! | `hash_dim`, `hash_seed` | `64`, `0` | hash backend parameters |
//! | `service_url` | `"http://127.0.0.1:8765"` | embedding/summarization service |
//! | `cache_dir` | none | on-disk embedding and summary cache |
//! | `checkpoint` | none | trained locator; otherwise trained from `train_dir` |
//! | `span_source` | `"gold"` | `gold` or `located` |
//! | `summarizers` | `["lead-3"]` | `lead-<k>` or `remote:<model>` |
//! | `improvement_pairs` | `[]` | `"<base>=<tuned>"` summarizer pairs |
//! | `random_baseline` | `false` | add a random-span block to located runs |
//! | `output_dir` | `"out"` | reports and per-query artifacts |
//! | `formats` | `["csv", "json", "text"]` | report formats to write |
//! | `seed` | none | seeds training, random spans and batching |
//! | `token_budget` | `1024` | summarizer input budget |
//! | `max_failure_rate` | `0.1` | abort threshold for per-query failures |
//!
//! Locator hyperparameters use their own names at the top level:
//! `out_channels`, `projection_dim`, `hidden_dim`, `kernel_size`,
//! `learning_rate`, `epochs`, `batch_size`, `length_norm`, `leaky_slope`,
//! `share_conv`, `init_scale`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::report::ReportFormat;
use crate::locator::LocatorConfig;
use crate::span::DEFAULT_TOKEN_BUDGET;

pub const LOCATOR_KEYS: [&str; 11] = [
    "out_channels",
    "projection_dim",
    "hidden_dim",
    "kernel_size",
    "learning_rate",
    "epochs",
    "batch_size",
    "length_norm",
    "leaky_slope",
    "share_conv",
    "init_scale",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpanSource {
    Gold,
    Located,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ExperimentKeys {
    train_dir: Option<PathBuf>,
    validation_dir: Option<PathBuf>,
    test_dir: Option<PathBuf>,
    embedding: String,
    hash_dim: usize,
    hash_seed: u64,
    service_url: String,
    cache_dir: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    span_source: SpanSource,
    summarizers: Vec<String>,
    improvement_pairs: Vec<String>,
    random_baseline: bool,
    output_dir: PathBuf,
    formats: Vec<String>,
    seed: Option<u64>,
    token_budget: usize,
    max_failure_rate: f64,
}

impl Default for ExperimentKeys {
    fn default() -> Self {
        Self {
            train_dir: None,
            validation_dir: None,
            test_dir: None,
            embedding: "hash".into(),
            hash_dim: 64,
            hash_seed: 0,
            service_url: "http://127.0.0.1:8765".into(),
            cache_dir: None,
            checkpoint: None,
            span_source: SpanSource::Gold,
            summarizers: vec!["lead-3".into()],
            improvement_pairs: Vec::new(),
            random_baseline: false,
            output_dir: PathBuf::from("out"),
            formats: vec!["csv".into(), "json".into(), "text".into()],
            seed: None,
            token_budget: DEFAULT_TOKEN_BUDGET,
            max_failure_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingSpec {
    Hash { dim: usize, seed: u64 },
    Remote { model: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum SummarizerSpec {
    Lead(usize),
    Remote { model: String },
}

impl SummarizerSpec {
    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        if let Some(k) = s.strip_prefix("lead-") {
            let k: usize = k
                .parse()
                .map_err(|_| ConfigError(format!("bad summarizer {s:?}")))?;
            if k == 0 {
                return Err(ConfigError(format!(
                    "bad summarizer {s:?}: k must be positive"
                )));
            }
            return Ok(SummarizerSpec::Lead(k));
        }
        match s.strip_prefix("remote:") {
            Some(m) if !m.is_empty() => Ok(SummarizerSpec::Remote {
                model: m.to_string(),
            }),
            _ => Err(ConfigError(format!(
                "unknown summarizer {s:?} (expected lead-<k> or remote:<model>)"
            ))),
        }
    }

    /// The name rows are labelled with.
    pub fn label(&self) -> String {
        match self {
            SummarizerSpec::Lead(k) => format!("lead-{k}"),
            SummarizerSpec::Remote { model } => format!("remote:{model}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("config: {0}")]
pub struct ConfigError(pub String);

/// Resolved experiment settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub train_dir: Option<PathBuf>,
    pub validation_dir: Option<PathBuf>,
    pub test_dir: Option<PathBuf>,
    pub embedding: EmbeddingSpec,
    pub service_url: String,
    pub cache_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub span_source: SpanSource,
    pub summarizers: Vec<SummarizerSpec>,
    pub improvement_pairs: Vec<(String, String)>,
    pub random_baseline: bool,
    pub output_dir: PathBuf,
    pub formats: Vec<ReportFormat>,
    pub seed: Option<u64>,
    pub token_budget: usize,
    pub max_failure_rate: f64,
    /// `locator.seed` mirrors `seed` when that is set.
    pub locator: LocatorConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::from_table(toml::Table::new()).expect("defaults are valid")
    }
}

/// Parses an override value as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Splits `key=value`.
pub fn parse_override(s: &str) -> Result<(String, String), ConfigError> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(ConfigError(format!("override {s:?} is not key=value"))),
    }
}

impl ExperimentConfig {
    /// Reads the optional config file and applies overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ConfigError(format!("reading {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| ConfigError(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for (k, v) in overrides {
            table.insert(k.clone(), parse_value(v));
        }
        Self::from_table(table)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Self::from_table(
            text.parse()
                .map_err(|e: toml::de::Error| ConfigError(e.to_string()))?,
        )
    }

    fn from_table(mut table: toml::Table) -> Result<Self, ConfigError> {
        let mut locator_table = toml::Table::new();
        for key in LOCATOR_KEYS {
            if let Some(v) = table.remove(key) {
                locator_table.insert(key.to_string(), v);
            }
        }
        let keys: ExperimentKeys = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError(e.message().to_string()))?;
        let mut locator: LocatorConfig = toml::Value::Table(locator_table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError(e.message().to_string()))?;
        if let Some(seed) = keys.seed {
            locator.seed = seed;
        }
        locator.validate().map_err(|e| ConfigError(e.to_string()))?;

        let embedding = if keys.embedding == "hash" {
            if keys.hash_dim < 2 {
                return Err(ConfigError("hash_dim must be at least 2".into()));
            }
            EmbeddingSpec::Hash {
                dim: keys.hash_dim,
                seed: keys.hash_seed,
            }
        } else {
            match keys.embedding.strip_prefix("remote:") {
                Some(m) if !m.is_empty() => EmbeddingSpec::Remote {
                    model: m.to_string(),
                },
                _ => {
                    return Err(ConfigError(format!(
                        "unknown embedding backend {:?} (expected hash or remote:<model>)",
                        keys.embedding
                    )))
                }
            }
        };
        if keys.summarizers.is_empty() {
            return Err(ConfigError("at least one summarizer is required".into()));
        }
        let summarizers = keys
            .summarizers
            .iter()
            .map(|s| SummarizerSpec::parse(s))
            .collect::<Result<Vec<_>, _>>()?;
        let improvement_pairs = keys
            .improvement_pairs
            .iter()
            .map(|p| match p.split_once('=') {
                Some((b, t)) if !b.is_empty() && !t.is_empty() => {
                    Ok((b.to_string(), t.to_string()))
                }
                _ => Err(ConfigError(format!(
                    "improvement pair {p:?} is not base=tuned"
                ))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let formats = keys
            .formats
            .iter()
            .map(|f| {
                f.parse::<ReportFormat>()
                    .map_err(|e| ConfigError(e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if keys.token_budget < 4 {
            return Err(ConfigError("token_budget must be at least 4".into()));
        }
        if !(0.0..=1.0).contains(&keys.max_failure_rate) {
            return Err(ConfigError("max_failure_rate must lie in [0, 1]".into()));
        }
        Ok(Self {
            train_dir: keys.train_dir,
            validation_dir: keys.validation_dir,
            test_dir: keys.test_dir,
            embedding,
            service_url: keys.service_url,
            cache_dir: keys.cache_dir,
            checkpoint: keys.checkpoint,
            span_source: keys.span_source,
            summarizers,
            improvement_pairs,
            random_baseline: keys.random_baseline,
            output_dir: keys.output_dir,
            formats,
            seed: keys.seed,
            token_budget: keys.token_budget,
            max_failure_rate: keys.max_failure_rate,
            locator,
        })
    }

    /// Checks the cross-field requirements of an evaluation run.
    pub fn validate_for_evaluation(&self) -> Result<(), ConfigError> {
        if self.test_dir.is_none() {
            return Err(ConfigError("test_dir is required".into()));
        }
        if self.seed.is_none() {
            return Err(ConfigError("seed is required".into()));
        }
        if self.span_source == SpanSource::Located
            && self.checkpoint.is_none()
            && self.train_dir.is_none()
        {
            return Err(ConfigError(
                "span_source = \"located\" needs a checkpoint or a train_dir to train one".into(),
            ));
        }
        Ok(())
    }

    pub fn embedding_name(&self) -> String {
        match &self.embedding {
            EmbeddingSpec::Hash { .. } => "hash".into(),
            EmbeddingSpec::Remote { model } => format!("remote:{model}"),
        }
    }
}
