use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Real;

/// Squared-exponential kernel `ω² exp(−½ Σ_k ((x_k − y_k)/ℓ_k)²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct KernelParams<T: Real> {
    pub amplitude: T,
    pub lengthscales: DVector<T>,
    /// Absolute diagonal term added to the training covariance.
    pub jitter: T,
}

impl<T: Real> KernelParams<T> {
    pub fn new(amplitude: T, lengthscales: DVector<T>, jitter: T) -> Result<Self> {
        let p = Self { amplitude, lengthscales, jitter };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: T| v > T::zero() && v.is_finite();
        if !ok(self.amplitude) || !self.lengthscales.iter().all(|&l| ok(l)) || !ok(self.jitter) || self.lengthscales.is_empty() {
            return Err(Error::InvalidInput("kernel amplitude, lengthscales and jitter must be positive and finite".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn variance(&self) -> T {
        self.amplitude * self.amplitude
    }

    /// Rows of `x` divided by the lengthscales.
    pub fn scale_rows(&self, x: &DMatrix<T>) -> DMatrix<T> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] / self.lengthscales[j])
    }

    pub fn eval(&self, x: &DVector<T>, y: &DVector<T>) -> T {
        let mut s = T::zero();
        for k in 0..x.len() {
            let u = (x[k] - y[k]) / self.lengthscales[k];
            s += u * u;
        }
        self.variance() * (-T::of(0.5) * s).exp()
    }

    /// `∂k(x, y)/∂x = −Λ⁻¹(x − y) k(x, y)`.
    pub fn grad_x(&self, x: &DVector<T>, y: &DVector<T>) -> DVector<T> {
        let k = self.eval(x, y);
        DVector::from_fn(x.len(), |i, _| -(x[i] - y[i]) / (self.lengthscales[i] * self.lengthscales[i]) * k)
    }

    /// Covariance between the rows of two pre-scaled input matrices.
    pub fn cross_scaled(&self, a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
        let w = self.variance();
        let half = T::of(0.5);
        DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
            let mut s = T::zero();
            for k in 0..a.ncols() {
                let u = a[(i, k)] - b[(j, k)];
                s += u * u;
            }
            w * (-half * s).exp()
        })
    }

    pub fn cross(&self, a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
        self.cross_scaled(&self.scale_rows(a), &self.scale_rows(b))
    }

    /// Training covariance `K(X, X)` without jitter.
    pub fn gram(&self, x: &DMatrix<T>) -> DMatrix<T> {
        let s = self.scale_rows(x);
        self.cross_scaled(&s, &s)
    }
}

pub fn kernel_eval<T: Real>(params: &KernelParams<T>, x: &DVector<T>, y: &DVector<T>) -> T {
    params.eval(x, y)
}
