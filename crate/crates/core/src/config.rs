//! Run configuration: one TOML document with a section per concern.
//!
//! Every key has a default and unset paths are empty strings, so the
//! serialized effective config lists every key that `--set` may touch.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{ColumnMap, Metric, TaskAdapter, TaskKind};
use crate::evolution::EvolutionConfig;
use crate::genome::Registry;
use crate::llm::{PriceTable, RetryPolicy, DEFAULT_REASONING_TAG};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("override {0:?} is not of the form key.path=value")]
    BadOverride(String),
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSection {
    /// Natural-language task description shown to the optimizer.
    pub description: String,
    pub kind: TaskKind,
    pub labels: Vec<String>,
    pub positive_label: String,
    pub metric: Metric,
    pub answer_tag: String,
    pub default_cue: String,
}

impl Default for TaskSection {
    fn default() -> Self {
        Self {
            description: String::new(),
            kind: TaskKind::Classification,
            labels: vec!["negative".into(), "positive".into()],
            positive_label: String::new(),
            metric: Metric::Accuracy,
            answer_tag: "ans".into(),
            default_cue: String::new(),
        }
    }
}

impl TaskSection {
    pub fn adapter(&self) -> Result<TaskAdapter, ConfigError> {
        let a = TaskAdapter {
            kind: self.kind,
            labels: if self.kind == TaskKind::Classification {
                self.labels.iter().map(|l| l.trim().to_lowercase()).collect()
            } else {
                Vec::new()
            },
            positive_label: self.positive_label.clone(),
            metric: self.metric,
            answer_tag: self.answer_tag.clone(),
            default_cue: self.default_cue.clone(),
        };
        a.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// One file split at random into test and dev parts.
    pub path: String,
    /// Explicit split; used when both are set.
    pub dev_path: String,
    pub test_path: String,
    pub test_size: usize,
    pub columns: ColumnMap,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            path: String::new(),
            dev_path: String::new(),
            test_path: String::new(),
            test_size: 100,
            columns: ColumnMap::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TemplateSection {
    /// Template file; empty for the built-in template.
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoolsSection {
    /// Pools file; empty for `<out>/pools.json`.
    pub path: String,
    pub values_per_type: usize,
    /// Adds the empty ("null") value to every pool.
    pub include_null: bool,
}

impl Default for PoolsSection {
    fn default() -> Self {
        Self {
            path: String::new(),
            values_per_type: 10,
            include_null: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlmSection {
    pub base_url: String,
    pub model: String,
    /// Separate endpoint for the target role; empty to share the optimizer's.
    pub target_base_url: String,
    pub target_model: String,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
    /// Blocks of this tag are removed from replies; empty disables it.
    pub reasoning_tag: String,
    /// Fixture script used with `--mock`; empty for the built-in offline
    /// responder.
    pub mock_script: String,
    pub retry: RetryPolicy,
    pub prices: PriceTable,
}

impl Default for LlmSection {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            model: String::new(),
            target_base_url: String::new(),
            target_model: String::new(),
            timeout_secs: 120,
            max_in_flight: 4,
            reasoning_tag: DEFAULT_REASONING_TAG.into(),
            mock_script: String::new(),
            retry: RetryPolicy::default(),
            prices: PriceTable::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Dev examples scored per prompt; 0 for the whole dev set.
    pub dev_subsample: usize,
    pub workers: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            dev_subsample: 50,
            workers: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seeds: Vec<u64>,
    pub out: String,
    /// Directory overriding meta-prompt texts; empty for the built-in set.
    pub catalog_dir: String,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seeds: vec![5, 10, 15],
            out: "runs".into(),
            catalog_dir: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub task: TaskSection,
    pub data: DataSection,
    pub template: TemplateSection,
    pub pools: PoolsSection,
    pub llm: LlmSection,
    pub evolution: EvolutionConfig,
    pub eval: EvalSection,
    pub run: RunSection,
    pub registry: Registry,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Config {
    /// Reads `path` and applies `key.path=value` overrides.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text, overrides)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let cfg = cfg.with_overrides(overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Overrides are applied to the effective config (file plus defaults),
    /// so any key that exists there may be set.
    pub fn with_overrides(self, overrides: &[String]) -> Result<Self, ConfigError> {
        if overrides.is_empty() {
            return Ok(self);
        }
        let base_dir = self.base_dir.clone();
        let mut tree = toml::Value::try_from(&self).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        let mut cfg: Config = tree.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.base_dir = base_dir;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        toml::to_string(self).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.evolution.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.task.adapter()?;
        if self.run.seeds.is_empty() {
            return Err(ConfigError::Invalid("run.seeds is empty".into()));
        }
        if self.pools.values_per_type == 0 {
            return Err(ConfigError::Invalid("pools.values_per_type must be positive".into()));
        }
        if self.llm.max_in_flight == 0 || self.eval.workers == 0 {
            return Err(ConfigError::Invalid("concurrency limits must be positive".into()));
        }
        Ok(())
    }

    /// `p` joined onto the config's directory unless absolute; `None` for
    /// an unset (empty) path.
    pub fn resolve(&self, p: &str) -> Option<PathBuf> {
        if p.is_empty() {
            None
        } else {
            Some(self.base_dir.join(p))
        }
    }
}

/// Sets `key.path` inside `tree`. The key must already exist. The value is
/// read as a TOML literal, falling back to a plain string.
pub fn apply_override(tree: &mut toml::Value, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::BadOverride(assignment.to_string()))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError::BadOverride(assignment.to_string()));
    }
    let mut node = tree;
    for part in key.split('.') {
        node = node
            .as_table_mut()
            .and_then(|t| t.get_mut(part))
            .ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    *node = value;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip() {
        let cfg = Config::default();
        let text = cfg.to_toml().unwrap();
        let back = Config::from_toml(&text, &[]).unwrap();
        assert_eq!(back, cfg);
        assert!(text.contains("[[registry]]"));
    }

    #[test]
    fn override_roundtrip() {
        let cfg = Config::from_toml(
            "",
            &[
                "evolution.epochs=3".into(),
                "task.description=classify sentences".into(),
                "run.seeds=[1, 2]".into(),
                "evolution.memory_form=continuous".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.evolution.epochs, 3);
        assert_eq!(cfg.task.description, "classify sentences");
        assert_eq!(cfg.run.seeds, [1, 2]);
        let again = Config::from_toml(&cfg.to_toml().unwrap(), &[]).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            Config::from_toml("", &["evolution.epochz=3".into()]),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(Config::from_toml("[evolution]\nepochz = 3\n", &[]).is_err());
        assert!(matches!(
            Config::from_toml("", &["novalue".into()]),
            Err(ConfigError::BadOverride(_))
        ));
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(Config::from_toml("", &["evolution.population_size=1".into()]).is_err());
        assert!(Config::from_toml("", &["evolution.epochs=\"many\"".into()]).is_err());
        assert!(Config::from_toml("[task]\nkind = \"summarization\"\n", &[]).is_err());
    }
}
