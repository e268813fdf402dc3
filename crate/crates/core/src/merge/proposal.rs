use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

use super::consensus::ConsensusApprox;
use crate::error::{Error, Result};
use crate::linalg::{column_means, log_det_from_cholesky, sample_covariance};
use crate::Real;

/// An iid sampler with a normalised log-density.
pub trait Proposal<T: Real>: Sync {
    fn dim(&self) -> usize;
    fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> DMatrix<T>
    where
        Self: Sized;
    fn log_density(&self, x: &DVector<T>) -> T;
}

/// Multivariate Student-t with location `μ`, scale `S` and `ν` degrees of freedom.
#[derive(Debug, Clone)]
pub struct StudentT<T: Real> {
    location: DVector<T>,
    scale_factor: DMatrix<T>,
    dof: f64,
    log_norm: f64,
}

impl<T: Real> StudentT<T> {
    pub fn new(location: DVector<T>, scale: DMatrix<T>, dof: f64) -> Result<Self> {
        if !(dof > 0.0) || !dof.is_finite() {
            return Err(Error::Config(format!("degrees of freedom must be positive, got {dof}")));
        }
        let d = location.len();
        if scale.shape() != (d, d) {
            return Err(Error::InvalidInput(format!("scale is {}x{}, location has length {d}", scale.nrows(), scale.ncols())));
        }
        let ch = scale
            .cholesky()
            .ok_or_else(|| Error::Factorization("Student-t scale matrix is not positive definite".into()))?;
        let df = d as f64;
        let log_norm = ln_gamma(0.5 * (dof + df)) - ln_gamma(0.5 * dof) - 0.5 * df * (dof * std::f64::consts::PI).ln()
            - 0.5 * log_det_from_cholesky(&ch).as_f64();
        Ok(Self { location, scale_factor: ch.l(), dof, log_norm })
    }

    /// The t distribution whose covariance `ν/(ν−2)·S` equals `covariance`.
    pub fn with_covariance(location: DVector<T>, covariance: &DMatrix<T>, dof: f64) -> Result<Self> {
        if !(dof > 2.0) {
            return Err(Error::Config(format!("a Student-t proposal needs more than 2 degrees of freedom, got {dof}")));
        }
        Self::new(location, covariance * T::of((dof - 2.0) / dof), dof)
    }

    pub fn location(&self) -> &DVector<T> {
        &self.location
    }

    pub fn dof(&self) -> f64 {
        self.dof
    }
}

impl<T: Real> Proposal<T> for StudentT<T> {
    fn dim(&self) -> usize {
        self.location.len()
    }

    fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> DMatrix<T> {
        let d = self.dim();
        let chi = ChiSquared::new(self.dof).expect("positive degrees of freedom");
        let mut out = DMatrix::zeros(n, d);
        for i in 0..n {
            let z = DVector::from_fn(d, |_, _| T::of(rng.sample(StandardNormal)));
            let u: f64 = chi.sample(rng);
            let x = &self.location + (&self.scale_factor * z) * T::of((self.dof / u).sqrt());
            out.set_row(i, &x.transpose());
        }
        out
    }

    fn log_density(&self, x: &DVector<T>) -> T {
        let d = self.dim() as f64;
        let diff = x - &self.location;
        let u = self
            .scale_factor
            .solve_lower_triangular(&diff)
            .expect("scale factor has a positive diagonal");
        let q = u.dot(&u).as_f64();
        T::of(self.log_norm - 0.5 * (self.dof + d) * (q / self.dof).ln_1p())
    }
}

/// Student-t matched to the consensus mean and `(Σ W_c)⁻¹` covariance.
pub fn student_t_proposal<T: Real>(approx: &ConsensusApprox<T>, dof: f64) -> Result<StudentT<T>> {
    StudentT::with_covariance(approx.mean.clone(), &approx.covariance, dof)
}

/// Student-t matched to the empirical moments of a sample.
pub fn student_t_from_sample<T: Real>(sample: &DMatrix<T>, dof: f64) -> Result<StudentT<T>> {
    if sample.nrows() < sample.ncols() + 1 {
        return Err(Error::InvalidInput("too few draws to estimate proposal moments".into()));
    }
    let (cov, _) = crate::linalg::ridged(&sample_covariance(sample), T::of(1e-8))?;
    StudentT::with_covariance(column_means(sample), &cov, dof)
}
