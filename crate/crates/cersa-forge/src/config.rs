//! Declarative experiment configuration.
//!
//! A single JSON document pins the task, the model stack, the training
//! hyperparameters, optional comparison kinds, and output paths. Validation
//! runs before anything else and reports every problem it can find at once,
//! with JSON field paths.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::adapter::AdapterKind;
use crate::error::{Error, Result};
use crate::task::SynthTask;
use crate::train::{ModelSpec, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: SynthTask,
    pub model: ModelSpec,
    pub train: TrainConfig,
    /// Kinds for `--compare` mode; every layer of the model template is
    /// switched to each kind in turn.
    #[serde(default)]
    pub compare_kinds: Option<Vec<AdapterKind>>,
    /// Run seeds for `--compare` mode; defaults to the train seed alone.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn compare_seeds(&self) -> Vec<u64> {
        match &self.seeds {
            Some(seeds) if !seeds.is_empty() => seeds.clone(),
            _ => vec![self.train.seed],
        }
    }

    /// Semantic checks after parsing; collects every issue.
    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        if let Err(e) = self.model.validate() {
            issues.push(format!("model: {e}"));
        }
        match self.train.validate() {
            Ok(()) => {}
            Err(Error::Config { issues: train_issues }) => {
                issues.extend(train_issues.into_iter().map(|i| format!("train: {i}")));
            }
            Err(e) => issues.push(format!("train: {e}")),
        }
        if let Some(kinds) = &self.compare_kinds {
            if kinds.is_empty() {
                issues.push("compare_kinds: must not be empty when present".into());
            }
            for (i, kind) in kinds.iter().enumerate() {
                if let Err(e) = kind.validate() {
                    issues.push(format!("compare_kinds[{i}]: {e}"));
                }
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Config { issues })
        }
    }
}

/// Parse and validate a config document, reporting all problems found:
/// missing sections, per-section shape errors, then semantic issues.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| Error::Config { issues: vec![format!("not valid JSON: {e}")] })?;
    let Some(obj) = value.as_object() else {
        return Err(Error::Config { issues: vec!["top level must be a JSON object".into()] });
    };

    let mut issues = Vec::new();
    for field in ["task", "model", "train", "out_dir"] {
        if !obj.contains_key(field) {
            issues.push(format!("{field}: missing required field"));
        }
    }

    // Section-by-section parse so one broken section does not mask the rest.
    if let Some(v) = obj.get("task") {
        if let Err(e) = serde_json::from_value::<SynthTask>(v.clone()) {
            issues.push(format!("task: {e}"));
        }
    }
    if let Some(v) = obj.get("model") {
        if let Err(e) = serde_json::from_value::<ModelSpec>(v.clone()) {
            issues.push(format!("model: {e}"));
        }
    }
    if let Some(v) = obj.get("train") {
        if let Err(e) = serde_json::from_value::<TrainConfig>(v.clone()) {
            issues.push(format!("train: {e}"));
        }
    }
    if let Some(v) = obj.get("compare_kinds") {
        if !v.is_null() {
            if let Err(e) = serde_json::from_value::<Vec<AdapterKind>>(v.clone()) {
                issues.push(format!("compare_kinds: {e}"));
            }
        }
    }
    if let Some(v) = obj.get("seeds") {
        if !v.is_null() {
            if let Err(e) = serde_json::from_value::<Vec<u64>>(v.clone()) {
                issues.push(format!("seeds: {e}"));
            }
        }
    }
    if let Some(v) = obj.get("out_dir") {
        if !v.is_string() {
            issues.push("out_dir: must be a string path".into());
        }
    }
    if !issues.is_empty() {
        return Err(Error::Config { issues });
    }

    let config: ExperimentConfig = serde_json::from_value(value)?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config { issues: vec![format!("cannot read {}: {e}", path.display())] })?;
    parse_config(&text)
}
