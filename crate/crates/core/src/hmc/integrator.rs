use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::{LogDensity, Real};

/// Euclidean metric for the momentum: stores `M⁻¹` and the lower Cholesky factor of `M`.
#[derive(Debug, Clone)]
pub struct MassMatrix<T: Real> {
    inverse: DMatrix<T>,
    factor: DMatrix<T>,
}

impl<T: Real> MassMatrix<T> {
    pub fn identity(d: usize) -> Self {
        Self { inverse: DMatrix::identity(d, d), factor: DMatrix::identity(d, d) }
    }

    pub fn new(mass: DMatrix<T>) -> Result<Self> {
        if !mass.is_square() || mass.nrows() == 0 {
            return Err(Error::Config("mass matrix must be square and non-empty".into()));
        }
        let asym = (&mass - mass.transpose()).amax();
        if asym > T::of(1e-10) * mass.amax().max(T::one()) {
            return Err(Error::Config("mass matrix is not symmetric".into()));
        }
        let chol = mass
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Config("mass matrix is not positive definite".into()))?;
        Ok(Self { inverse: chol.inverse(), factor: chol.l() })
    }

    /// Metric whose inverse is the given covariance, the usual choice after warmup.
    pub fn from_covariance(cov: &DMatrix<T>) -> Result<Self> {
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Factorization("covariance for mass matrix is not positive definite".into()))?;
        let mut mass = chol.inverse();
        crate::linalg::symmetrize(&mut mass);
        let factor = mass
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Factorization("inverted covariance is not positive definite".into()))?
            .l();
        let mut inverse = cov.clone();
        crate::linalg::symmetrize(&mut inverse);
        Ok(Self { inverse, factor })
    }

    pub fn dim(&self) -> usize {
        self.inverse.nrows()
    }

    pub fn inverse(&self) -> &DMatrix<T> {
        &self.inverse
    }

    pub fn factor(&self) -> &DMatrix<T> {
        &self.factor
    }

    pub fn kinetic(&self, momentum: &DVector<T>) -> T {
        T::of(0.5) * momentum.dot(&(&self.inverse * momentum))
    }

    /// Draws `φ ~ N(0, M)` from standard normals.
    pub fn momentum_from(&self, z: &DVector<T>) -> DVector<T> {
        &self.factor * z
    }
}

/// Position, momentum and the cached density evaluation at the position.
#[derive(Debug, Clone)]
pub struct PhasePoint<T: Real> {
    pub theta: DVector<T>,
    pub momentum: DVector<T>,
    pub log_density: T,
    pub grad: DVector<T>,
}

impl<T: Real> PhasePoint<T> {
    pub fn hamiltonian(&self, mass: &MassMatrix<T>) -> T {
        mass.kinetic(&self.momentum) - self.log_density
    }
}

/// Integrates `steps` leapfrog steps from a point whose density and gradient are already known.
/// The flag is set when a non-finite value appears, in which case the trajectory stops early.
pub fn leapfrog_from<T: Real, D: LogDensity<T> + ?Sized>(
    target: &D,
    start: &PhasePoint<T>,
    eps: T,
    steps: usize,
    mass: &MassMatrix<T>,
) -> (PhasePoint<T>, bool) {
    let half = eps * T::of(0.5);
    let mut theta = start.theta.clone();
    let mut momentum = start.momentum.clone();
    let mut grad = start.grad.clone();
    let mut log_density = start.log_density;
    for _ in 0..steps {
        momentum.axpy(half, &grad, T::one());
        theta.axpy(eps, &(mass.inverse() * &momentum), T::one());
        let (ld, g) = target.log_density_and_grad(&theta);
        log_density = ld;
        grad = g;
        if !log_density.is_finite() || grad.iter().any(|v| !v.is_finite()) {
            return (PhasePoint { theta, momentum, log_density, grad }, true);
        }
        momentum.axpy(half, &grad, T::one());
    }
    (PhasePoint { theta, momentum, log_density, grad }, false)
}

/// Plain leapfrog map `(θ, φ) → (θ', φ')`.
pub fn leapfrog<T: Real, D: LogDensity<T> + ?Sized>(
    target: &D,
    theta: &DVector<T>,
    momentum: &DVector<T>,
    eps: T,
    steps: usize,
    mass: &MassMatrix<T>,
) -> Result<(DVector<T>, DVector<T>)> {
    if theta.iter().chain(momentum.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("leapfrog start is not finite".into()));
    }
    let (log_density, grad) = target.log_density_and_grad(theta);
    let start = PhasePoint { theta: theta.clone(), momentum: momentum.clone(), log_density, grad };
    let (end, divergent) = leapfrog_from(target, &start, eps, steps, mass);
    if divergent {
        return Err(Error::Domain("non-finite gradient during leapfrog trajectory".into()));
    }
    Ok((end.theta, end.momentum))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{FnDensity, IsoGaussian};

    #[test]
    fn free_particle_moves_linearly() {
        let flat = FnDensity::new(2, |_x: &DVector<f64>| (0.0, DVector::zeros(2)));
        let theta = DVector::from_vec(vec![1.0, -1.0]);
        let p = DVector::from_vec(vec![0.5, 2.0]);
        let (t, q) = leapfrog(&flat, &theta, &p, 0.1, 7, &MassMatrix::identity(2)).unwrap();
        assert!((t - (&theta + &p * 0.7)).amax() < 1e-14);
        assert_eq!(q, p);
    }

    #[test]
    fn mass_matrix_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(MassMatrix::new(m).is_err());
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(MassMatrix::new(m).is_err());
    }

    #[test]
    fn covariance_metric_round_trips() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.5]);
        let mass = MassMatrix::from_covariance(&cov).unwrap();
        let m = mass.factor() * mass.factor().transpose();
        assert!((m * &cov - DMatrix::<f64>::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn divergence_is_flagged() {
        let target = IsoGaussian { mean: DVector::from_vec(vec![0.0]), sd: 1e-200 };
        let r = leapfrog(&target, &DVector::from_vec(vec![1.0]), &DVector::from_vec(vec![0.0]), 1.0, 3, &MassMatrix::identity(1));
        assert!(r.is_err());
    }
}
