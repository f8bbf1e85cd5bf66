#![allow(dead_code)]

pub mod determinism;
pub mod grad;
pub mod mixed;

use fcft::model::ModelConfig;

/// Two-layer model small enough for finite differences and repeated training.
pub fn tiny() -> ModelConfig {
    ModelConfig {
        fe_channels: vec![4, 4],
        fe_kernels: vec![4, 2],
        fe_strides: vec![2, 2],
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        d_ffn: 12,
        pos_kernel: 4,
        pos_groups: 2,
        head_dropout: 0.2,
        internal_dropout: 0.1,
        n_tasks: 2,
        layer_norm_eps: 1e-5,
    }
}
