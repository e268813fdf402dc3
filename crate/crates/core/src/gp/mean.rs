use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Real;

/// Quadratic mean `β0 + (x − c)ᵀβ1 + β2 (x − c)ᵀV⁻¹(x − c)` with `β2 < 0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "", try_from = "RawMean<T>", into = "RawMean<T>")]
pub struct MeanParams<T: Real> {
    beta0: T,
    beta1: DVector<T>,
    beta2: T,
    scale_matrix: DMatrix<T>,
    center: DVector<T>,
    scale_inverse: DMatrix<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "")]
struct RawMean<T: Real> {
    beta0: T,
    beta1: DVector<T>,
    beta2: T,
    scale_matrix: DMatrix<T>,
    center: DVector<T>,
}

impl<T: Real> TryFrom<RawMean<T>> for MeanParams<T> {
    type Error = Error;
    fn try_from(r: RawMean<T>) -> Result<Self> {
        MeanParams::new(r.beta0, r.beta1, r.beta2, r.scale_matrix, r.center)
    }
}

impl<T: Real> From<MeanParams<T>> for RawMean<T> {
    fn from(m: MeanParams<T>) -> Self {
        RawMean { beta0: m.beta0, beta1: m.beta1, beta2: m.beta2, scale_matrix: m.scale_matrix, center: m.center }
    }
}

impl<T: Real> MeanParams<T> {
    pub fn new(beta0: T, beta1: DVector<T>, beta2: T, scale_matrix: DMatrix<T>, center: DVector<T>) -> Result<Self> {
        let d = beta1.len();
        if scale_matrix.nrows() != d || scale_matrix.ncols() != d || center.len() != d {
            return Err(Error::InvalidInput(format!("mean parameters disagree on dimension {d}")));
        }
        if !(beta2 < T::zero()) || !beta2.is_finite() {
            return Err(Error::InvalidInput(format!("quadratic coefficient must be negative, got {}", beta2.as_f64())));
        }
        let scale_inverse = scale_matrix
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidInput("mean scale matrix is not positive definite".into()))?
            .inverse();
        Ok(Self { beta0, beta1, beta2, scale_matrix, center, scale_inverse })
    }

    /// Mean centred at the origin.
    pub fn uncentred(beta0: T, beta1: DVector<T>, beta2: T, scale_matrix: DMatrix<T>) -> Result<Self> {
        let d = beta1.len();
        Self::new(beta0, beta1, beta2, scale_matrix, DVector::zeros(d))
    }

    pub fn dim(&self) -> usize {
        self.beta1.len()
    }
    pub fn beta0(&self) -> T {
        self.beta0
    }
    pub fn beta1(&self) -> &DVector<T> {
        &self.beta1
    }
    pub fn beta2(&self) -> T {
        self.beta2
    }
    pub fn scale_matrix(&self) -> &DMatrix<T> {
        &self.scale_matrix
    }
    pub fn scale_inverse(&self) -> &DMatrix<T> {
        &self.scale_inverse
    }
    pub fn center(&self) -> &DVector<T> {
        &self.center
    }

    pub fn quad_form(&self, x: &DVector<T>) -> T {
        let u = x - &self.center;
        u.dot(&(&self.scale_inverse * &u))
    }

    pub fn eval(&self, x: &DVector<T>) -> T {
        let u = x - &self.center;
        self.beta0 + u.dot(&self.beta1) + self.beta2 * u.dot(&(&self.scale_inverse * &u))
    }

    pub fn grad(&self, x: &DVector<T>) -> DVector<T> {
        let u = x - &self.center;
        &self.beta1 + (&self.scale_inverse * u) * (self.beta2 * T::of(2.0))
    }

    pub fn eval_rows(&self, x: &DMatrix<T>) -> DVector<T> {
        DVector::from_iterator(x.nrows(), x.row_iter().map(|r| self.eval(&r.transpose())))
    }
}

pub fn mean_eval<T: Real>(params: &MeanParams<T>, x: &DVector<T>) -> T {
    params.eval(x)
}
