//! Run configuration: a JSON file whose fields override the desk-scale
//! defaults, merged key by key so a config only needs to name what it changes.

use std::fs;
use std::path::Path;

use catanet_core::dataset::CorpusSpec;
use catanet_core::model::ModelConfig;
use catanet_core::training::TrainingSchedule;
use catanet_core::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub n_test_per_surgeon: usize,
    pub k_folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub corpus: CorpusSpec,
    pub model: ModelConfig,
    pub schedule: TrainingSchedule,
    pub split: SplitConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: CorpusSpec::default(),
            model: ModelConfig::desk(),
            schedule: TrainingSchedule::desk(),
            split: SplitConfig {
                n_test_per_surgeon: 5,
                k_folds: 2,
            },
        }
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    /// Defaults overridden by the JSON object in `patch`. Unknown keys are rejected.
    pub fn from_patch(patch: Value) -> Result<Self> {
        if !patch.is_object() {
            return Err(Error::validation("config must be a JSON object"));
        }
        let mut base = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
        let before = base.clone();
        merge(&mut base, patch);
        reject_unknown(&before, &base, "")?;
        serde_json::from_value(base).map_err(|e| Error::validation(format!("invalid config: {e}")))
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let patch: Value = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        Self::from_patch(patch)
    }
}

/// Keys present after merging that the default tree does not know about.
fn reject_unknown(known: &Value, merged: &Value, prefix: &str) -> Result<()> {
    if let (Value::Object(k), Value::Object(m)) = (known, merged) {
        for (key, v) in m {
            let path = if prefix.is_empty() {
                key.clone()
            } else {
                format!("{prefix}.{key}")
            };
            match k.get(key) {
                None if !k.is_empty() => return Err(Error::validation(format!("unknown config key `{path}`"))),
                None => {}
                Some(kv) => reject_unknown(kv, v, &path)?,
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn partial_override_keeps_defaults() {
        let c = RunConfig::from_patch(json!({"corpus": {"n_videos": 8}, "schedule": {"alpha": 0.5}})).unwrap();
        assert_eq!(c.corpus.n_videos, 8);
        assert_eq!(c.corpus.fps, 2.5);
        assert_eq!(c.schedule.alpha, 0.5);
        assert_eq!(c.model, ModelConfig::desk());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_patch(json!({"corpus": {"n_video": 8}})).unwrap_err().is_validation());
        assert!(RunConfig::from_patch(json!([1])).is_err());
    }
}
