use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::canonical_json;
use crate::error::{Error, Result};
use crate::model::{FreezePlan, LoraConfig, ModelConfig};
use crate::objectives::DEFAULT_EPS;
use crate::optim::{AdamWConfig, LossScaler};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    Single,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Directory holding `manifest.jsonl`.
    pub corpus: Option<PathBuf>,
    /// Cache directory for cached runs.
    pub cache: Option<PathBuf>,
    /// Starting checkpoint; a freshly built backbone otherwise.
    pub init: Option<PathBuf>,
}

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub freeze: FreezePlan,
    pub lora: LoraConfig,
    pub precision: Precision,
    pub scaler: LossScaler,
    pub cached: bool,
    /// Defaults to the first trainable layer of a caching plan.
    pub split_layer: Option<usize>,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub ccc_eps: f64,
    /// Dropout inside frozen transformer blocks.
    pub frozen_dropout: bool,
    /// Seed of the backbone when no starting checkpoint is given.
    pub backbone_seed: u64,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::desk(),
            freeze: FreezePlan::Full,
            lora: LoraConfig::default(),
            precision: Precision::Single,
            scaler: LossScaler::default(),
            cached: false,
            split_layer: None,
            seeds: vec![0, 1, 2, 3, 4],
            epochs: 5,
            batch_size: 32,
            optimizer: AdamWConfig::default(),
            ccc_eps: DEFAULT_EPS,
            frozen_dropout: false,
            backbone_seed: 0,
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| {
            Err(Error::Config {
                field: field.into(),
                reason,
            })
        };
        self.model.validate()?;
        self.freeze.validate(self.model.n_layers)?;
        self.lora.validate()?;
        if self.epochs == 0 {
            return bad("epochs", "must be ≥ 1".into());
        }
        if self.batch_size < 2 {
            return bad("batch_size", "CCC needs at least 2 samples per batch".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds", "need at least one seed".into());
        }
        if !(self.optimizer.lr > 0.0) {
            return bad("optimizer.lr", "must be > 0".into());
        }
        if self.cached && !self.freeze.is_caching() {
            return bad("cached", format!("cached training needs a caching_partial plan, got {}", self.freeze));
        }
        if self.cached && self.frozen_dropout {
            return bad("frozen_dropout", "cached states come from a dropout-free prefix".into());
        }
        if let Some(s) = self.split_layer {
            if self.freeze.split_layer(self.model.n_layers) != Some(s) {
                return bad("split_layer", format!("{s} does not match plan {}", self.freeze));
            }
        }
        if self.precision == Precision::Mixed && !(self.scaler.scale >= 1.0) {
            return bad("scaler.scale", "initial loss scale must be ≥ 1".into());
        }
        Ok(())
    }

    pub fn effective_split_layer(&self) -> Option<usize> {
        self.freeze.split_layer(self.model.n_layers)
    }

    /// Short hash of everything except the seed list and file locations.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.seeds.clear();
        c.paths = Paths::default();
        let digest = Sha256::digest(canonical_json(&c)?.as_bytes());
        Ok(hex::encode(digest)[..12].to_string())
    }

    /// `full_sp`, `partial3_mp`, `cache3_sp`, …
    pub fn label(&self) -> String {
        let p = match self.precision {
            Precision::Single => "sp",
            Precision::Mixed => "mp",
        };
        format!("{}_{p}", self.freeze.short_name())
    }
}

/// Applies `dotted.key=value` to a JSON tree. The value is parsed as JSON
/// when possible and taken as a string otherwise.
pub fn apply_override(root: &mut serde_json::Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Parameter(format!("override `{assignment}` is not key=value")))?;
    if key.is_empty() {
        return Err(Error::Parameter(format!("override `{assignment}` has an empty key")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if !node.is_object() {
            return Err(Error::Parameter(format!("override `{key}`: `{}` is not an object", parts[..i].join("."))));
        }
        let map = node.as_object_mut().expect("checked");
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    unreachable!("split yields at least one part")
}

/// Parses a config from JSON text (or defaults when `None`) and applies
/// overrides in order.
pub fn load_config(text: Option<&str>, overrides: &[String]) -> Result<RunConfig> {
    let mut v = match text {
        Some(t) => serde_json::from_str(t).map_err(|e| Error::Config {
            field: "<file>".into(),
            reason: e.to_string(),
        })?,
        None => serde_json::to_value(RunConfig::default())?,
    };
    if !v.is_object() {
        return Err(Error::Config {
            field: "<file>".into(),
            reason: "top level must be an object".into(),
        });
    }
    if let Some(obj) = v.as_object_mut() {
        // Fill defaults first so overrides of nested keys land in full objects.
        let defaults = serde_json::to_value(RunConfig::default())?;
        for (k, dv) in defaults.as_object().expect("struct").iter() {
            obj.entry(k.clone()).or_insert_with(|| dv.clone());
        }
    }
    for o in overrides {
        apply_override(&mut v, o)?;
    }
    let cfg: RunConfig = serde_json::from_value(v).map_err(|e| Error::Config {
        field: "<config>".into(),
        reason: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}
