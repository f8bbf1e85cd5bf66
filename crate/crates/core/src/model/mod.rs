//! Network definition, parameter bookkeeping and freeze plans.

mod config;
pub mod counts;
mod freeze;
mod network;
mod params;

pub use config::{task_name, ModelConfig, TASK_NAMES};
pub use freeze::{FreezePlan, LoraConfig};
pub use network::{ForwardOptions, ForwardOutput, Input, Model, PROJECTIONS};
pub use params::{Binder, Group, Param, ParamStore};
