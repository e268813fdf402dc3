mod consensus;
mod merged;
mod proposal;

pub use consensus::{consensus_merge, consensus_merge_chains, ConsensusApprox};
pub use merged::{grad_log_expected_density, log_expected_density, MergedGp};
pub use proposal::{student_t_from_sample, student_t_proposal, Proposal, StudentT};
