//! Benchmark models, synthetic data, batching, and (sub)posterior densities.

mod data;
mod model;
mod subposterior;

pub use data::{partition_data, Batch, Dataset};
pub use model::{generate_data, Model, ModelName};
pub use subposterior::{
    full_log_posterior, grad_log_subposterior, log_subposterior, Subposterior,
};
