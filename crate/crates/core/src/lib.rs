pub mod autodiff;
pub mod cache;
pub mod checkpoint;
pub mod cli;
mod codec;
pub mod data;
pub mod error;
pub mod experiment;
pub mod half;
pub mod model;
pub mod objectives;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use codec::canonical_json;

pub use error::{Error, Result};
