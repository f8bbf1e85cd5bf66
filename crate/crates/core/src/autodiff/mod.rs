//! Reverse-mode automatic differentiation over dense tensors.

pub mod gradcheck;
mod graph;
pub mod kernels;

pub use graph::{op_counts, reset_op_counts, Graph, Mode, OpCounts, Var};
pub(crate) use graph::CccStats;
