//! Closed-form trainable-parameter counts, independent of enumeration.

use super::config::ModelConfig;
use super::freeze::{FreezePlan, LoraConfig};

pub fn per_layer(c: &ModelConfig) -> usize {
    let (d, f) = (c.d_model, c.d_ffn);
    4 * (d * d + d) + (d * f + f) + (f * d + d) + 4 * d
}

pub fn positional(c: &ModelConfig) -> usize {
    let d = c.d_model;
    d * (d / c.pos_groups) * c.pos_kernel + d + 2 * d
}

pub fn heads(c: &ModelConfig) -> usize {
    c.n_tasks * (c.d_model + 1)
}

pub fn adapters(c: &ModelConfig, l: &LoraConfig) -> usize {
    c.n_layers * l.targets.len() * 2 * l.rank * c.d_model
}

pub fn front_end(c: &ModelConfig) -> usize {
    let mut c_in = 1;
    let mut n = 0;
    for (&ch, &k) in c.fe_channels.iter().zip(&c.fe_kernels) {
        n += ch * c_in * k + ch;
        c_in = ch;
    }
    n + c_in * c.d_model + c.d_model
}

pub fn trainable(c: &ModelConfig, plan: FreezePlan, lora: &LoraConfig) -> usize {
    match plan {
        FreezePlan::Full => c.n_layers * per_layer(c) + positional(c) + heads(c),
        FreezePlan::Partial { n } => n * per_layer(c) + positional(c) + heads(c),
        FreezePlan::CachingPartial { n } => n * per_layer(c) + heads(c),
        FreezePlan::Lora => adapters(c, lora) + heads(c),
    }
}

/// Rounds the way a results table would: whole millions, otherwise hundreds
/// of thousands. Counts under 100K fall back to whole thousands, then units.
pub fn display(n: usize) -> String {
    let x = n as f64;
    if x >= 1e6 {
        format!("{}M", (x / 1e6).round())
    } else if x >= 1e5 {
        format!("{}K", (x / 1e5).round() * 100.0)
    } else if x >= 1e3 {
        format!("{}K", (x / 1e3).round())
    } else {
        n.to_string()
    }
}
