use serde::{Deserialize, Serialize};

use crate::autodiff::kernels::conv_out_len;
use crate::error::{Error, Result};

/// Architecture of the speech regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub fe_channels: Vec<usize>,
    pub fe_kernels: Vec<usize>,
    pub fe_strides: Vec<usize>,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ffn: usize,
    pub pos_kernel: usize,
    pub pos_groups: usize,
    #[serde(default = "default_head_dropout")]
    pub head_dropout: f64,
    #[serde(default = "default_internal_dropout")]
    pub internal_dropout: f64,
    #[serde(default = "default_tasks")]
    pub n_tasks: usize,
    #[serde(default = "default_eps")]
    pub layer_norm_eps: f64,
}

fn default_head_dropout() -> f64 {
    0.2
}
fn default_internal_dropout() -> f64 {
    0.1
}
fn default_tasks() -> usize {
    2
}
fn default_eps() -> f64 {
    1e-5
}

pub const TASK_NAMES: [&str; 2] = ["activation", "valence"];

pub fn task_name(i: usize) -> String {
    TASK_NAMES
        .get(i)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("task{i}"))
}

impl ModelConfig {
    /// Dimensions of the 12-layer, width-768 base model.
    pub fn base_equivalent() -> Self {
        Self {
            fe_channels: vec![512; 7],
            fe_kernels: vec![10, 3, 3, 3, 3, 2, 2],
            fe_strides: vec![5, 2, 2, 2, 2, 2, 2],
            d_model: 768,
            n_layers: 12,
            n_heads: 12,
            d_ffn: 3072,
            pos_kernel: 128,
            pos_groups: 16,
            head_dropout: 0.2,
            internal_dropout: 0.1,
            n_tasks: 2,
            layer_norm_eps: 1e-5,
        }
    }

    /// Small configuration that trains on one CPU core in minutes.
    /// The front-end hops 80 samples (5 ms at 16 kHz).
    pub fn desk() -> Self {
        Self {
            fe_channels: vec![32, 32, 32, 32],
            fe_kernels: vec![10, 4, 4, 2],
            fe_strides: vec![5, 4, 2, 2],
            d_model: 64,
            n_layers: 4,
            n_heads: 4,
            d_ffn: 256,
            pos_kernel: 16,
            pos_groups: 4,
            head_dropout: 0.2,
            internal_dropout: 0.1,
            n_tasks: 2,
            layer_norm_eps: 1e-5,
        }
    }

    /// The desk configuration with a 12-layer stack, for timing frozen-prefix savings.
    pub fn desk_deep() -> Self {
        Self {
            n_layers: 12,
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "base-equivalent" | "base" => Ok(Self::base_equivalent()),
            "desk" => Ok(Self::desk()),
            "desk-deep" => Ok(Self::desk_deep()),
            other => Err(Error::Config {
                field: "preset".into(),
                reason: format!("unknown preset `{other}` (base-equivalent, desk, desk-deep)"),
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| {
            Err(Error::Config {
                field: field.into(),
                reason,
            })
        };
        if self.fe_channels.is_empty() {
            return bad("fe_channels", "front-end needs at least one conv layer".into());
        }
        if self.fe_kernels.len() != self.fe_channels.len() {
            return bad(
                "fe_kernels",
                format!("length {} != fe_channels length {}", self.fe_kernels.len(), self.fe_channels.len()),
            );
        }
        if self.fe_strides.len() != self.fe_channels.len() {
            return bad(
                "fe_strides",
                format!("length {} != fe_channels length {}", self.fe_strides.len(), self.fe_channels.len()),
            );
        }
        if self.fe_channels.contains(&0) || self.fe_kernels.contains(&0) || self.fe_strides.contains(&0) {
            return bad("fe_channels", "channels, kernels and strides must be ≥ 1".into());
        }
        if self.d_model == 0 {
            return bad("d_model", "must be ≥ 1".into());
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad("n_heads", format!("d_model {} not divisible by {}", self.d_model, self.n_heads));
        }
        if self.pos_groups == 0 || self.d_model % self.pos_groups != 0 {
            return bad(
                "pos_groups",
                format!("d_model {} not divisible by {}", self.d_model, self.pos_groups),
            );
        }
        if self.pos_kernel == 0 {
            return bad("pos_kernel", "must be ≥ 1".into());
        }
        if self.d_ffn == 0 {
            return bad("d_ffn", "must be ≥ 1".into());
        }
        if self.n_tasks == 0 {
            return bad("n_tasks", "must be ≥ 1".into());
        }
        for (field, p) in [("head_dropout", self.head_dropout), ("internal_dropout", self.internal_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return bad(field, format!("{p} outside [0, 1)"));
            }
        }
        if !(self.layer_norm_eps > 0.0) {
            return bad("layer_norm_eps", "must be > 0".into());
        }
        Ok(())
    }

    /// Number of frames the front-end produces for `samples` audio samples.
    pub fn frames(&self, samples: usize) -> Option<usize> {
        let mut t = samples;
        for (&k, &s) in self.fe_kernels.iter().zip(&self.fe_strides) {
            t = conv_out_len(t, k, s, 0)?;
        }
        Some(t)
    }

    /// Shortest input that yields at least one frame.
    pub fn min_samples(&self) -> usize {
        let mut len = 1;
        for (&k, &s) in self.fe_kernels.iter().zip(&self.fe_strides).rev() {
            len = (len - 1) * s + k;
        }
        len
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}
