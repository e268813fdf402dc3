use nalgebra::DVector;

use crate::scalar::Real;

/// An unnormalised log-density with an analytic gradient.
///
/// `log_density` and `log_density_and_grad` must return bit-identical values
/// for the same input; the samplers cache the value from one and compare it
/// against the other.
pub trait LogDensity<T: Real> {
    fn dim(&self) -> usize;

    fn log_density(&self, theta: &DVector<T>) -> T {
        self.log_density_and_grad(theta).0
    }

    fn log_density_and_grad(&self, theta: &DVector<T>) -> (T, DVector<T>);

    fn grad_log_density(&self, theta: &DVector<T>) -> DVector<T> {
        self.log_density_and_grad(theta).1
    }
}

impl<T: Real, D: LogDensity<T> + ?Sized> LogDensity<T> for &D {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn log_density(&self, theta: &DVector<T>) -> T {
        (**self).log_density(theta)
    }
    fn log_density_and_grad(&self, theta: &DVector<T>) -> (T, DVector<T>) {
        (**self).log_density_and_grad(theta)
    }
}

/// Wraps a pair of closures as a [`LogDensity`]; handy for tests and ad-hoc targets.
pub struct FnDensity<F> {
    dim: usize,
    f: F,
}

impl<F> FnDensity<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<T: Real, F> LogDensity<T> for FnDensity<F>
where
    F: Fn(&DVector<T>) -> (T, DVector<T>),
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn log_density_and_grad(&self, theta: &DVector<T>) -> (T, DVector<T>) {
        (self.f)(theta)
    }
}

/// Isotropic Gaussian `N(mean, sd² I)`, unnormalised.
#[derive(Clone, Debug)]
pub struct IsoGaussian<T> {
    pub mean: DVector<T>,
    pub sd: T,
}

impl<T: Real> LogDensity<T> for IsoGaussian<T> {
    fn dim(&self) -> usize {
        self.mean.len()
    }
    fn log_density_and_grad(&self, theta: &DVector<T>) -> (T, DVector<T>) {
        let diff = theta - &self.mean;
        let prec = T::one() / (self.sd * self.sd);
        let value = -T::of(0.5) * prec * diff.dot(&diff);
        (value, diff * (-prec))
    }
}
