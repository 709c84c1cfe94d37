//! The merged run configuration: one JSON file plus `--set key=value`
//! overrides addressed by dotted paths.

use std::path::{Path, PathBuf};

use mfpt_core::model::MfptConfig;
use mfpt_core::train::TrainConfig;
use mfpt_core::triage::TriagePolicy;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probmaps: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: MfptConfig,
    pub train: TrainConfig,
    pub triage: TriagePolicy,
    pub paths: Paths,
}

impl RunConfig {
    /// Reads `path` (or starts from defaults), applies the overrides in
    /// order and validates every section.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let (cfg, _) = Self::load_raw(path, overrides)?;
        Ok(cfg)
    }

    /// Like [`RunConfig::load`], also returning the merged JSON document so
    /// callers can tell which keys were given explicitly.
    pub fn load_raw(path: Option<&Path>, overrides: &[String]) -> CliResult<(Self, Value)> {
        let mut doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => Value::Object(Map::new()),
        };
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: RunConfig =
            serde_json::from_value(doc.clone()).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok((cfg, doc))
    }

    pub fn validate(&self) -> CliResult<()> {
        self.model.validate()?;
        self.model.head_split()?;
        self.train.validate()?;
        self.triage.validate()?;
        Ok(())
    }
}

/// Applies one `a.b.c=value` override. The value is parsed as JSON when
/// possible and taken as a string otherwise.
pub fn apply_override(doc: &mut Value, spec: &str) -> CliResult<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got `{spec}`")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("--set: malformed key `{key}`")));
    }
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.to_owned()));
    let mut node = doc;
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("--set {key}: `{}` is not a section", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert((*part).to_owned(), value);
            return Ok(());
        }
        node = obj.entry(*part).or_insert_with(|| Value::Object(Map::new()));
    }
    unreachable!("key has at least one part")
}
