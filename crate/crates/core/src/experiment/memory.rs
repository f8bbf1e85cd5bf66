//! Analytic training-memory estimate.

use serde::{Deserialize, Serialize};

use super::config::Precision;
use crate::model::{counts, FreezePlan, LoraConfig, ModelConfig};

pub const BUDGETS_GB: [f64; 2] = [11.0, 48.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryAssumptions {
    pub batch_size: usize,
    /// Length of the longest (padded) sample in a batch.
    pub seconds: f64,
    pub sample_rate: usize,
}

impl Default for MemoryAssumptions {
    fn default() -> Self {
        Self {
            batch_size: 32,
            seconds: 10.0,
            sample_rate: 16_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEstimate {
    pub parameters: u64,
    pub gradients: u64,
    pub optimizer: u64,
    pub activations: u64,
    pub total: u64,
    /// Budgets in GB (10⁹ bytes) the total exceeds.
    pub exceeds_gb: Vec<f64>,
}

/// Values a transformer block keeps for its backward pass, per sample.
fn block_saved_values(c: &ModelConfig, frames: u64) -> u64 {
    let (d, f, h) = (c.d_model as u64, c.d_ffn as u64, c.n_heads as u64);
    // q, k, v, attention output, projection, two residual sums and two norms,
    // plus the FFN hidden layer before and after GELU and the softmax output.
    frames * (9 * d + 2 * f) + h * frames * frames
}

/// Bytes for parameters, gradients, AdamW moments and saved activations.
///
/// Frozen parameters carry no gradient or moment bytes. Activations are
/// kept for every block from the first one gradients must reach; frozen
/// blocks below it only need one block of transient memory, and a cached
/// run skips the front-end and frozen prefix entirely.
pub fn estimate_memory(
    c: &ModelConfig,
    plan: FreezePlan,
    lora: &LoraConfig,
    precision: Precision,
    cached: bool,
    a: &MemoryAssumptions,
) -> MemoryEstimate {
    let total_params = (counts::front_end(c)
        + c.n_layers * counts::per_layer(c)
        + counts::positional(c)
        + counts::heads(c)
        + if plan == FreezePlan::Lora { counts::adapters(c, lora) } else { 0 }) as u64;
    let trainable = counts::trainable(c, plan, lora) as u64;
    let act_width: u64 = match precision {
        Precision::Single => 4,
        Precision::Mixed => 2,
    };
    let parameters = match precision {
        Precision::Single => 4 * total_params,
        // 32-bit masters plus half copies
        Precision::Mixed => 6 * total_params,
    };
    let gradients = act_width * trainable;
    let optimizer = 8 * trainable;

    let samples = (a.seconds * a.sample_rate as f64) as usize;
    let frames = c.frames(samples).unwrap_or(1) as u64;
    let d = c.d_model as u64;
    let b = a.batch_size as u64;
    let block = block_saved_values(c, frames);
    let n = c.n_layers as u64;
    let (saved_blocks, positional_saved) = match plan {
        FreezePlan::Full | FreezePlan::Lora => (n, true),
        FreezePlan::Partial { n: k } => (k as u64, true),
        FreezePlan::CachingPartial { n: k } => (k as u64, false),
    };
    let mut values = saved_blocks * block + 2 * frames * d;
    if positional_saved {
        values += 4 * frames * d;
    }
    if !cached {
        // transient front-end output and one frozen block at a time
        let fe: u64 = {
            let mut t = samples;
            let mut total = 0u64;
            for ((&ch, &k), &s) in c.fe_channels.iter().zip(&c.fe_kernels).zip(&c.fe_strides) {
                t = if t >= k { (t - k) / s + 1 } else { 0 };
                total = total.max((ch * t) as u64);
            }
            total
        };
        values += fe.max(if saved_blocks < n { block } else { 0 });
    }
    let activations = b * values * act_width;
    let total = parameters + gradients + optimizer + activations;
    let exceeds_gb = BUDGETS_GB.iter().copied().filter(|&g| total as f64 > g * 1e9).collect();
    MemoryEstimate {
        parameters,
        gradients,
        optimizer,
        activations,
        total,
        exceeds_gb,
    }
}
