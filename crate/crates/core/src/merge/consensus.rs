use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmc::ChainRecord;
use crate::linalg::{column_means, mean_diagonal, sample_covariance, symmetrize};
use crate::Real;

/// Gaussian implied by consensus Monte Carlo.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ConsensusApprox<T: Real> {
    /// Mean of the combined draws.
    pub mean: DVector<T>,
    /// `(Σ_c W_c)⁻¹`.
    pub covariance: DMatrix<T>,
    /// Empirical covariance of the combined draws.
    pub empirical_covariance: DMatrix<T>,
    pub batch_means: Vec<DVector<T>>,
    pub batch_covariances: Vec<DMatrix<T>>,
    /// Batches whose covariance needed a ridge before inversion.
    pub ridged_batches: Vec<usize>,
}

const RIDGE: f64 = 1e-8;

fn inverse_with_ridge<T: Real>(m: &DMatrix<T>) -> Result<(DMatrix<T>, bool)> {
    if let Some(ch) = m.clone().cholesky() {
        return Ok((ch.inverse(), false));
    }
    let d = m.nrows();
    let ridge = T::of(RIDGE) * mean_diagonal(m).absval().max(T::of(f64::MIN_POSITIVE));
    let shifted = m + DMatrix::identity(d, d) * ridge;
    let ch = shifted
        .cholesky()
        .ok_or_else(|| Error::Factorization("batch covariance is singular even after ridge".into()))?;
    Ok((ch.inverse(), true))
}

/// Draw-by-draw precision-weighted combination of equal-length batch samples.
pub fn consensus_merge<T: Real>(samples: &[DMatrix<T>]) -> Result<(DMatrix<T>, ConsensusApprox<T>)> {
    let Some(first) = samples.first() else {
        return Err(Error::InvalidInput("consensus needs at least one batch sample".into()));
    };
    let (n, d) = first.shape();
    if n < 2 {
        return Err(Error::InvalidInput("consensus needs at least two draws per batch".into()));
    }
    if let Some(bad) = samples.iter().position(|s| s.shape() != (n, d)) {
        return Err(Error::InvalidInput(format!(
            "batch {bad} sample is {}x{}, expected {n}x{d}",
            samples[bad].nrows(),
            samples[bad].ncols()
        )));
    }
    let batch_means: Vec<_> = samples.iter().map(column_means).collect();
    let batch_covariances: Vec<_> = samples.iter().map(sample_covariance).collect();
    let mut precisions = Vec::with_capacity(samples.len());
    let mut ridged_batches = Vec::new();
    for (c, cov) in batch_covariances.iter().enumerate() {
        let (w, ridged) = inverse_with_ridge(cov)?;
        if ridged {
            ridged_batches.push(c);
        }
        precisions.push(w);
    }
    let total = precisions.iter().fold(DMatrix::zeros(d, d), |acc, w| acc + w);
    let total_chol = total
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Factorization("summed consensus precision is not positive definite".into()))?;
    let mut covariance = total_chol.inverse();
    symmetrize(&mut covariance);

    let mut weighted_sum = DMatrix::zeros(n, d);
    for (s, w) in samples.iter().zip(&precisions) {
        weighted_sum += s * w;
    }
    // Rows of the result are (Σ W)⁻¹ Σ W_c θ_{c,j}; W is symmetric.
    let combined = total_chol.solve(&weighted_sum.transpose()).transpose();
    let approx = ConsensusApprox {
        mean: column_means(&combined),
        covariance,
        empirical_covariance: sample_covariance(&combined),
        batch_means,
        batch_covariances,
        ridged_batches,
    };
    Ok((combined, approx))
}

/// Consensus over the post-adaptation draws of each chain.
pub fn consensus_merge_chains<T: Real>(chains: &[ChainRecord<T>]) -> Result<(DMatrix<T>, ConsensusApprox<T>)> {
    let samples: Vec<_> = chains.iter().map(|c| c.sampling_draws()).collect();
    consensus_merge(&samples)
}
