use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{jittered_cholesky, mean_diagonal, pivoted_cholesky, spectral_factor, symmetrize};
use crate::Real;

/// Eigenvalues (or pivots) below this fraction of the largest are dropped.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Factorization {
    /// Full Cholesky with jitter escalated ×10 from `1e-10` to `1e-4` times the mean variance.
    Cholesky,
    /// Eigendecomposition truncated to the largest eigenvalues.
    Spectral { max_rank: Option<usize> },
    /// Diagonally pivoted Cholesky, stopped at the same relative tolerance.
    #[default]
    PivotedCholesky,
}

/// Joint draws `ℓ_m = μ + A z_m`; row `m` of `values` is one realisation.
#[derive(Debug, Clone)]
pub struct Realisations<T: Real> {
    pub values: DMatrix<T>,
    /// Number of columns of `A`.
    pub rank: usize,
}

pub fn realisations_from_factor<T: Real>(mu: &DVector<T>, factor: &DMatrix<T>, m_count: usize, seed: u64) -> Realisations<T> {
    let n = mu.len();
    let r = factor.ncols();
    let mut rng = crate::rng::seeded(seed);
    let z = DMatrix::from_fn(m_count, r, |_, _| T::of(rng.sample(StandardNormal)));
    let mut values = if r == 0 { DMatrix::zeros(m_count, n) } else { z * factor.transpose() };
    for mut row in values.row_iter_mut() {
        row += mu.transpose();
    }
    Realisations { values, rank: r }
}

pub fn sample_realisations<T: Real>(
    mu: &DVector<T>,
    sigma: &DMatrix<T>,
    m_count: usize,
    seed: u64,
    method: Factorization,
) -> Result<Realisations<T>> {
    let n = mu.len();
    if sigma.nrows() != n || sigma.ncols() != n {
        return Err(Error::InvalidInput(format!("covariance is {}x{}, mean has length {n}", sigma.nrows(), sigma.ncols())));
    }
    if sigma.iter().chain(mu.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite predictive mean or covariance".into()));
    }
    let mut s = sigma.clone();
    symmetrize(&mut s);
    let scale = s.diagonal().iter().fold(T::zero(), |a, &b| a.max(b.absval()));
    if s.diagonal().iter().any(|&v| v < -T::of(1e-8) * scale.max(T::one())) {
        return Err(Error::InvalidInput("covariance has a negative variance".into()));
    }
    if scale == T::zero() {
        return Ok(realisations_from_factor(mu, &DMatrix::zeros(n, 0), m_count, seed));
    }
    let tol = T::of(RANK_TOLERANCE);
    let factor = match method {
        Factorization::Cholesky => {
            let base = mean_diagonal(&s).max(T::of(f64::MIN_POSITIVE));
            let (ch, _) = jittered_cholesky(&s, base * T::of(1e-10), base * T::of(1e-4))?;
            ch.l()
        }
        Factorization::Spectral { max_rank } => spectral_factor(&s, tol, max_rank.unwrap_or(usize::MAX)),
        Factorization::PivotedCholesky => pivoted_cholesky(&s, tol, usize::MAX),
    };
    Ok(realisations_from_factor(mu, &factor, m_count, seed))
}
