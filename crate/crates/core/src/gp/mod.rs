mod fit;
mod kernel;
mod mean;
mod realise;
mod surrogate;

pub use fit::{fit_hyperparams, fit_surrogate, FitOptions, LmlEval, MarginalLikelihood};
pub use kernel::{kernel_eval, KernelParams};
pub use mean::{mean_eval, MeanParams};
pub use realise::{realisations_from_factor, sample_realisations, Factorization, Realisations, RANK_TOLERANCE};
pub use surrogate::{FitDiagnostics, GpSurrogate, PointPrediction};

/// Joint predictive mean and covariance of a surrogate at the rows of `query`.
pub fn gp_posterior<T: crate::Real>(
    surrogate: &GpSurrogate<T>,
    query: &nalgebra::DMatrix<T>,
) -> (nalgebra::DVector<T>, nalgebra::DMatrix<T>) {
    surrogate.gp_posterior(query)
}
