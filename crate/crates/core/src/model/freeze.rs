use std::fmt;

use serde::{Deserialize, Serialize};

use super::params::Group;
use crate::error::{Error, Result};

/// Which parameter groups receive updates.
///
/// | plan                 | trainable                                      |
/// |----------------------|------------------------------------------------|
/// | `full`               | everything except the front-end                |
/// | `partial(n)`         | last `n` layers, positional block, heads       |
/// | `caching_partial(n)` | last `n` layers, heads                         |
/// | `lora`               | adapters, heads                                |
///
/// The front-end (conv encoder and feature projection) is frozen in every plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FreezePlan {
    Full,
    Partial { n: usize },
    Lora,
    CachingPartial { n: usize },
}

impl Default for FreezePlan {
    fn default() -> Self {
        FreezePlan::Full
    }
}

impl FreezePlan {
    pub fn is_trainable(&self, group: Group, n_layers: usize) -> bool {
        match (*self, group) {
            (_, Group::FrontEnd) => false,
            (_, Group::Head) => true,
            (FreezePlan::Full, _) => true,
            (FreezePlan::Partial { .. }, Group::Positional) => true,
            (FreezePlan::Partial { n } | FreezePlan::CachingPartial { n }, Group::Layer(i)) => {
                i + n >= n_layers
            }
            (FreezePlan::Lora, Group::Adapter(_)) => true,
            _ => false,
        }
    }

    pub fn validate(&self, n_layers: usize) -> Result<()> {
        match *self {
            FreezePlan::Partial { n } | FreezePlan::CachingPartial { n } if n > n_layers => {
                Err(Error::Parameter(format!(
                    "cannot finetune {n} layers of a {n_layers}-layer stack"
                )))
            }
            _ => Ok(()),
        }
    }

    /// First layer that receives gradients, i.e. where a cache can split.
    pub fn split_layer(&self, n_layers: usize) -> Option<usize> {
        match *self {
            FreezePlan::CachingPartial { n } => Some(n_layers - n.min(n_layers)),
            _ => None,
        }
    }

    pub fn is_caching(&self) -> bool {
        matches!(self, FreezePlan::CachingPartial { .. })
    }

    /// Short names: `full`, `partial3`, `lora`, `cache3`.
    pub fn parse_short(name: &str) -> Result<Self> {
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Parameter(format!("bad plan name `{name}`")))
        };
        if name == "full" {
            Ok(FreezePlan::Full)
        } else if name == "lora" {
            Ok(FreezePlan::Lora)
        } else if let Some(n) = name.strip_prefix("partial") {
            Ok(FreezePlan::Partial { n: num(n)? })
        } else if let Some(n) = name.strip_prefix("cache") {
            Ok(FreezePlan::CachingPartial { n: num(n)? })
        } else {
            Err(Error::Parameter(format!(
                "unknown plan `{name}` (full, partialN, lora, cacheN)"
            )))
        }
    }

    pub fn short_name(&self) -> String {
        match self {
            FreezePlan::Full => "full".into(),
            FreezePlan::Lora => "lora".into(),
            FreezePlan::Partial { n } => format!("partial{n}"),
            FreezePlan::CachingPartial { n } => format!("cache{n}"),
        }
    }
}

impl fmt::Display for FreezePlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.short_name())
    }
}

/// Low-rank adapter settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    pub dropout: f64,
    /// Attention projections to adapt, from `q`, `k`, `v`, `o`.
    pub targets: Vec<String>,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self {
            rank: 8,
            alpha: 16.0,
            dropout: 0.1,
            targets: vec!["q".into(), "v".into()],
        }
    }
}

impl LoraConfig {
    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::Config {
                field: "lora.rank".into(),
                reason: "must be ≥ 1".into(),
            });
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config {
                field: "lora.dropout".into(),
                reason: format!("{} outside [0, 1)", self.dropout),
            });
        }
        for t in &self.targets {
            if !["q", "k", "v", "o"].contains(&t.as_str()) {
                return Err(Error::Config {
                    field: "lora.targets".into(),
                    reason: format!("unknown projection `{t}`"),
                });
            }
        }
        Ok(())
    }

    pub fn targets(&self, proj: &str) -> bool {
        self.targets.iter().any(|t| t == proj)
    }
}
