use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::registry::{lookup, registry_keys, AlgorithmEntry, Quadrant};
use super::run::parse_params;
use crate::env::builtin::{self, BuiltinEnv};
use crate::error::{CaiError, Result};

/// A single run: environment, algorithm, seed, and algorithm parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env_id: String,
    pub algorithm: String,
    /// Checked against the registry when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadrant: Option<Quadrant>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "empty_object")]
    pub params: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

fn empty_object() -> Value {
    Value::Object(Map::new())
}

impl ExperimentConfig {
    pub fn new(env_id: &str, algorithm: &str) -> Self {
        Self {
            env_id: env_id.to_string(),
            algorithm: algorithm.to_string(),
            quadrant: None,
            seed: 0,
            params: empty_object(),
            out_dir: None,
        }
    }

    pub(crate) fn example(entry: &AlgorithmEntry) -> Self {
        Self { quadrant: Some(entry.quadrant), ..Self::new(entry.example_env, entry.key) }
    }

    /// Parses a JSON document, applying `key=value` overrides first.
    pub fn from_json(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: Value =
            serde_json::from_str(text).map_err(|e| CaiError::Validation(format!("config is not valid JSON: {e}")))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let config: Self =
            serde_json::from_value(doc).map_err(|e| CaiError::Validation(format!("bad config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CaiError::Validation(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text, overrides)
    }

    pub fn entry(&self) -> Result<&'static AlgorithmEntry> {
        lookup(&self.algorithm).ok_or_else(|| {
            CaiError::Validation(format!(
                "unknown algorithm {:?}; valid keys: {}",
                self.algorithm,
                registry_keys().join(", ")
            ))
        })
    }

    pub fn validate(&self) -> Result<()> {
        let entry = self.entry()?;
        if let Some(q) = self.quadrant {
            if q != entry.quadrant {
                return Err(CaiError::Validation(format!(
                    "{} belongs to the {} quadrant, not {q}",
                    entry.key, entry.quadrant
                )));
            }
        }
        if !self.params.is_object() {
            return Err(CaiError::Validation("params must be a JSON object".into()));
        }
        match builtin::load(&self.env_id)? {
            BuiltinEnv::Continuous(_) if !entry.continuous => {
                return Err(CaiError::Validation(format!("{} needs a tabular environment", entry.key)));
            }
            _ => {}
        }
        parse_params(entry.key, &self.params).map(|_| ())
    }

    /// The derived quadrant label.
    pub fn quadrant(&self) -> Result<Quadrant> {
        Ok(self.entry()?.quadrant)
    }
}

/// Sets a dot-path key (`planner.n_samples=256`) in a JSON document.
///
/// The value is parsed as JSON when possible and kept as a string
/// otherwise; intermediate objects are created on demand.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CaiError::Validation(format!("override {assignment:?} is not key=value")))?;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CaiError::Validation(format!("bad override path {path:?}")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    for (i, key) in keys.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| CaiError::Validation(format!("{} is not an object", keys[..i].join("."))))?;
        if i + 1 == keys.len() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(key.to_string()).or_insert_with(empty_object);
    }
    unreachable!("split always yields one key")
}
