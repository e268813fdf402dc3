mod dis;
mod gp_hmc;
mod gp_is;
mod weighted;

pub use dis::{run_dis, run_dis_with};
pub use gp_hmc::{best_training_point, gp_hmc_sample};
pub use gp_is::{run_gp_is, Functional, FunctionalSummary, GpIsConfig, GpIsResult};
pub use weighted::{resample, OverlapDiagnostics, WeightedSample};
