//! TOML run configuration. Relative paths resolve against the directory of
//! the configuration file.
//!
//! ```toml
//! vocabulary = "relations.txt"
//! keyframe_interval = 4
//! judge = "alpha"            # defaults to the first provider
//! debate_mode = "disagreement"
//! disagreement_delta = 0.3
//! cache_dir = "cache"
//!
//! [weights]
//! common_sense = 0.05
//! spatial = 1.7
//! temporal = 1.7
//! debate = 0.2
//! threshold = 0.3
//!
//! [[providers]]
//! id = "alpha"
//! kind = "mock"
//! rules = "alpha.rules.jsonl"
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentSettings, DEFAULT_BATCH_SIZE, DEFAULT_CANDIDATE_FLOOR};
use crate::debate::DebateMode;
use crate::model::FusionWeights;
use crate::provider::ProviderSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

fn default_interval() -> usize {
    1
}
fn default_delta() -> f64 {
    0.3
}
fn default_floor() -> f64 {
    DEFAULT_CANDIDATE_FLOOR
}
fn default_batch() -> usize {
    DEFAULT_BATCH_SIZE
}
fn default_parallelism() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefinementConfig {
    /// Relation vocabulary file.
    pub vocabulary: Option<PathBuf>,
    pub providers: Vec<ProviderSpec>,
    /// Provider id acting as judge; the first provider when unset.
    #[serde(default)]
    pub judge: Option<String>,
    #[serde(default = "default_interval")]
    pub keyframe_interval: usize,
    #[serde(default)]
    pub weights: FusionWeights<f64>,
    #[serde(default)]
    pub debate_mode: DebateMode,
    #[serde(default = "default_delta")]
    pub disagreement_delta: f64,
    #[serde(default = "default_floor")]
    pub candidate_floor: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Upper bound on concurrent prompts across the run.
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    /// Directory receiving one transcript file per debate.
    #[serde(default)]
    pub transcript_dir: Option<PathBuf>,
}

impl RefinementConfig {
    pub fn new(providers: Vec<ProviderSpec>) -> Self {
        Self {
            vocabulary: None,
            providers,
            judge: None,
            keyframe_interval: default_interval(),
            weights: FusionWeights::default(),
            debate_mode: DebateMode::default(),
            disagreement_delta: default_delta(),
            candidate_floor: default_floor(),
            batch_size: default_batch(),
            parallelism: default_parallelism(),
            cache_dir: None,
            transcript_dir: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut config = Self::parse(&text).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse { path: path.to_path_buf(), message },
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    /// Parses without resolving paths or validating.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
            path: PathBuf::new(),
            message: format!("{}: {}", e.path(), e.inner().message().trim()),
        })
    }

    /// Makes relative paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut self.vocabulary, &mut self.cache_dir, &mut self.transcript_dir].into_iter().flatten() {
            fix(p);
        }
        for spec in &mut self.providers {
            if let Some(p) = &mut spec.rules {
                fix(p);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.providers.is_empty() {
            return invalid("at least one provider is required".into());
        }
        let mut ids = BTreeSet::new();
        for spec in &self.providers {
            spec.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
            if !ids.insert(spec.id.as_str()) {
                return invalid(format!("duplicate provider id `{}`", spec.id));
            }
        }
        if let Some(judge) = &self.judge {
            if !ids.contains(judge.as_str()) {
                return invalid(format!("judge `{judge}` is not a configured provider"));
            }
        }
        if self.keyframe_interval < 1 {
            return invalid("keyframe_interval must be at least 1".into());
        }
        self.weights.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.disagreement_delta >= 0.0) {
            return invalid("disagreement_delta must be ≥ 0".into());
        }
        if !(0.0..=1.0).contains(&self.candidate_floor) {
            return invalid("candidate_floor must lie in [0,1]".into());
        }
        if self.batch_size < 1 || self.parallelism < 1 {
            return invalid("batch_size and parallelism must be at least 1".into());
        }
        Ok(())
    }

    pub fn judge_id(&self) -> &str {
        self.judge.as_deref().unwrap_or(&self.providers[0].id)
    }

    pub fn agent_settings(&self) -> AgentSettings {
        AgentSettings {
            candidate_floor: self.candidate_floor,
            batch_size: self.batch_size,
            parallelism: self.parallelism,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::ProviderKind;

    const SAMPLE: &str = r#"
vocabulary = "relations.txt"
keyframe_interval = 4
debate_mode = "always"

[weights]
common_sense = 0.05
spatial = 1.7
temporal = 1.7
debate = 0.2
threshold = 0.3

[[providers]]
id = "alpha"
kind = "mock"
rules = "alpha.jsonl"

[[providers]]
id = "beta"
kind = "http"
endpoint = "https://example.invalid/v1/chat/completions"
model_name = "m"
api_key_env = "BETA_KEY"
max_concurrency = 2
"#;

    #[test]
    fn loads_and_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, SAMPLE).unwrap();
        let c = RefinementConfig::load(&path).unwrap();
        assert_eq!(c.vocabulary.as_deref(), Some(dir.path().join("relations.txt").as_path()));
        assert_eq!(c.providers[0].rules.as_deref(), Some(dir.path().join("alpha.jsonl").as_path()));
        assert_eq!(c.providers[1].kind, ProviderKind::Http);
        assert_eq!(c.providers[1].max_concurrency, 2);
        assert_eq!(c.providers[1].max_retries, 3);
        assert_eq!(c.judge_id(), "alpha");
        assert_eq!(c.debate_mode, DebateMode::Always);
        assert_eq!(c.keyframe_interval, 4);
        assert_eq!(c.batch_size, 16);
        assert_eq!(c.weights, FusionWeights::vidhoi());
    }

    #[test]
    fn rejects_unknown_judge() {
        let text = format!("judge = \"gamma\"\n{SAMPLE}");
        let err = RefinementConfig::parse(&text).unwrap().validate().unwrap_err();
        assert!(err.to_string().contains("gamma"));
    }

    #[test]
    fn rejects_zero_interval_and_bad_threshold() {
        let c = RefinementConfig::parse(&SAMPLE.replace("keyframe_interval = 4", "keyframe_interval = 0")).unwrap();
        assert!(c.validate().is_err());
        let c = RefinementConfig::parse(&SAMPLE.replace("threshold = 0.3", "threshold = 1.0")).unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn parse_errors_name_the_field() {
        let err = RefinementConfig::parse(&SAMPLE.replace("keyframe_interval = 4", "keyframe_interval = \"x\"")).unwrap_err();
        assert!(err.to_string().contains("keyframe_interval"), "{err}");
        let err = RefinementConfig::parse("providers = []\nbogus = 1").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn http_provider_needs_endpoint() {
        let c = RefinementConfig::parse("[[providers]]\nid = \"x\"\nkind = \"http\"\n").unwrap();
        assert!(c.validate().is_err());
    }
}
