//! Configuration, data ingestion and the end-to-end experiment pipeline behind the `gp-merge` binary.

pub mod config;
pub mod emit;
pub mod ingest;
pub mod output;
pub mod pipeline;

pub use config::{Algorithm, ExperimentConfig};
pub use pipeline::{run_experiment, ExperimentOutcome};
