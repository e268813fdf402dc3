mod adapt;
mod chain;
mod integrator;
mod sampler;

pub use adapt::{find_reasonable_epsilon, DualAveraging};
pub use chain::{effective_sample_size, mcse_mean, postprocess, ChainRecord};
pub use integrator::{leapfrog, leapfrog_from, MassMatrix, PhasePoint};
pub use sampler::{run_hmc, HmcConfig, DIVERGENCE_THRESHOLD};
