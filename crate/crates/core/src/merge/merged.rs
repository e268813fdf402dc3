use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::gp::GpSurrogate;
use crate::{LogDensity, Real};

/// Sum of independent per-batch surrogates.
#[derive(Debug, Clone)]
pub struct MergedGp<T: Real> {
    surrogates: Vec<Arc<GpSurrogate<T>>>,
}

impl<T: Real> MergedGp<T> {
    pub fn new(surrogates: Vec<GpSurrogate<T>>) -> Result<Self> {
        Self::from_shared(surrogates.into_iter().map(Arc::new).collect())
    }

    pub fn from_shared(surrogates: Vec<Arc<GpSurrogate<T>>>) -> Result<Self> {
        let Some(first) = surrogates.first() else {
            return Err(Error::InvalidInput("merging needs at least one surrogate".into()));
        };
        let d = first.dim();
        if let Some(bad) = surrogates.iter().position(|s| s.dim() != d) {
            return Err(Error::InvalidInput(format!("surrogate {bad} has dimension {}, expected {d}", surrogates[bad].dim())));
        }
        Ok(Self { surrogates })
    }

    pub fn surrogates(&self) -> &[Arc<GpSurrogate<T>>] {
        &self.surrogates
    }

    pub fn n_batches(&self) -> usize {
        self.surrogates.len()
    }

    pub fn dim(&self) -> usize {
        self.surrogates[0].dim()
    }

    /// `(Σ_c μ_c(θ), Σ_c σ²_c(θ))`.
    pub fn moments(&self, theta: &DVector<T>) -> (T, T) {
        self.surrogates.iter().fold((T::zero(), T::zero()), |(m, v), s| {
            let (mc, vc) = s.predict(theta);
            (m + mc, v + vc)
        })
    }

    pub fn log_expected_density(&self, theta: &DVector<T>) -> T {
        let half = T::of(0.5);
        self.surrogates.iter().fold(T::zero(), |acc, s| {
            let (m, v) = s.predict(theta);
            acc + (m + half * v)
        })
    }

    pub fn grad_log_expected_density(&self, theta: &DVector<T>) -> DVector<T> {
        self.value_and_grad(theta).1
    }

    fn value_and_grad(&self, theta: &DVector<T>) -> (T, DVector<T>) {
        let half = T::of(0.5);
        let mut value = T::zero();
        let mut grad = DVector::zeros(theta.len());
        for s in &self.surrogates {
            let p = s.predict_with_grad(theta);
            value = value + (p.mean + half * p.var);
            grad += p.grad_mean + p.grad_var * half;
        }
        (value, grad)
    }
}

impl<T: Real> LogDensity<T> for MergedGp<T> {
    fn dim(&self) -> usize {
        MergedGp::dim(self)
    }
    fn log_density(&self, theta: &DVector<T>) -> T {
        self.log_expected_density(theta)
    }
    fn log_density_and_grad(&self, theta: &DVector<T>) -> (T, DVector<T>) {
        self.value_and_grad(theta)
    }
}

pub fn log_expected_density<T: Real>(merged: &MergedGp<T>, theta: &DVector<T>) -> T {
    merged.log_expected_density(theta)
}

pub fn grad_log_expected_density<T: Real>(merged: &MergedGp<T>, theta: &DVector<T>) -> DVector<T> {
    merged.grad_log_expected_density(theta)
}
