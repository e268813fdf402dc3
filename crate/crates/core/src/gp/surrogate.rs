use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::kernel::KernelParams;
use super::mean::MeanParams;
use super::realise::{realisations_from_factor, sample_realisations, Factorization, Realisations};
use crate::error::{Error, Result};
use crate::linalg::{pivoted_cholesky_with, symmetrize};
use crate::Real;

/// Outcome of the hyperparameter search.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub log_marginal_likelihood: f64,
    /// `(log ω, log ℓ_1..d, log(−β2))` at the optimum.
    pub log_params: Vec<f64>,
    pub restarts: usize,
    pub failed_restarts: usize,
    pub iterations: usize,
    pub converged: bool,
}

/// Mean, variance and their gradients at one query point.
#[derive(Debug, Clone)]
pub struct PointPrediction<T: Real> {
    pub mean: T,
    pub var: T,
    pub grad_mean: DVector<T>,
    pub grad_var: DVector<T>,
}

/// Fitted GP over one log-subposterior, conditioned on noiseless evaluations.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "", try_from = "SurrogateBlob<T>", into = "SurrogateBlob<T>")]
pub struct GpSurrogate<T: Real> {
    inputs: DMatrix<T>,
    targets: DVector<T>,
    kernel: KernelParams<T>,
    mean: MeanParams<T>,
    chol: Cholesky<T, Dyn>,
    weights: DVector<T>,
    scaled_inputs: DMatrix<T>,
    diagnostics: FitDiagnostics,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "")]
struct SurrogateBlob<T: Real> {
    inputs: DMatrix<T>,
    targets: DVector<T>,
    kernel: KernelParams<T>,
    mean: MeanParams<T>,
    #[serde(default)]
    diagnostics: FitDiagnostics,
}

impl<T: Real> TryFrom<SurrogateBlob<T>> for GpSurrogate<T> {
    type Error = Error;
    fn try_from(b: SurrogateBlob<T>) -> Result<Self> {
        GpSurrogate::assemble(b.inputs, b.targets, b.kernel, b.mean, b.diagnostics)
    }
}

impl<T: Real> From<GpSurrogate<T>> for SurrogateBlob<T> {
    fn from(s: GpSurrogate<T>) -> Self {
        SurrogateBlob { inputs: s.inputs, targets: s.targets, kernel: s.kernel, mean: s.mean, diagnostics: s.diagnostics }
    }
}

impl<T: Real> GpSurrogate<T> {
    /// Factorizes `K̃ + jitter·I`, escalating the jitter ×10 up to `1e-4 ω²` if needed.
    pub fn assemble(
        inputs: DMatrix<T>,
        targets: DVector<T>,
        mut kernel: KernelParams<T>,
        mean: MeanParams<T>,
        diagnostics: FitDiagnostics,
    ) -> Result<Self> {
        let (j, d) = inputs.shape();
        if targets.len() != j || kernel.dim() != d || mean.dim() != d {
            return Err(Error::InvalidInput(format!(
                "surrogate parts disagree: {j}x{d} inputs, {} targets, kernel dim {}, mean dim {}",
                targets.len(),
                kernel.dim(),
                mean.dim()
            )));
        }
        kernel.validate()?;
        let gram = kernel.gram(&inputs);
        let max_jitter = kernel.variance() * T::of(1e-4);
        let (chol, jitter) = crate::linalg::jittered_cholesky(&gram, kernel.jitter, max_jitter.max(kernel.jitter))?;
        kernel.jitter = jitter;
        let weights = chol.solve(&(&targets - mean.eval_rows(&inputs)));
        let scaled_inputs = kernel.scale_rows(&inputs);
        Ok(Self { inputs, targets, kernel, mean, chol, weights, scaled_inputs, diagnostics })
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }
    pub fn n_train(&self) -> usize {
        self.inputs.nrows()
    }
    pub fn inputs(&self) -> &DMatrix<T> {
        &self.inputs
    }
    pub fn targets(&self) -> &DVector<T> {
        &self.targets
    }
    pub fn kernel(&self) -> &KernelParams<T> {
        &self.kernel
    }
    pub fn mean(&self) -> &MeanParams<T> {
        &self.mean
    }
    pub fn diagnostics(&self) -> &FitDiagnostics {
        &self.diagnostics
    }
    /// `K̃⁻¹(ℓ − m)`.
    pub fn weights(&self) -> &DVector<T> {
        &self.weights
    }
    pub fn chol_factor(&self) -> DMatrix<T> {
        self.chol.l()
    }

    /// Kernel vector between the training inputs and `x`.
    fn k_star(&self, x: &DVector<T>) -> DVector<T> {
        let w = self.kernel.variance();
        let half = T::of(0.5);
        let ls = &self.kernel.lengthscales;
        DVector::from_fn(self.n_train(), |i, _| {
            let mut s = T::zero();
            for k in 0..x.len() {
                let u = self.scaled_inputs[(i, k)] - x[k] / ls[k];
                s += u * u;
            }
            w * (-half * s).exp()
        })
    }

    pub fn predict_mean(&self, x: &DVector<T>) -> T {
        self.mean.eval(x) + self.k_star(x).dot(&self.weights)
    }

    /// Predictive mean and variance, computed exactly as in [`Self::predict_with_grad`].
    pub fn predict(&self, x: &DVector<T>) -> (T, T) {
        let ks = self.k_star(x);
        let mean = self.mean.eval(x) + ks.dot(&self.weights);
        let var = (self.kernel.variance() - ks.dot(&self.chol.solve(&ks))).max(T::zero());
        (mean, var)
    }

    pub fn predict_with_grad(&self, x: &DVector<T>) -> PointPrediction<T> {
        let ks = self.k_star(x);
        let kinv_ks = self.chol.solve(&ks);
        let d = self.dim();
        let mut grad_mean = self.mean.grad(x);
        let mut grad_var = DVector::zeros(d);
        let ls2: Vec<T> = self.kernel.lengthscales.iter().map(|l| *l * *l).collect();
        for i in 0..self.n_train() {
            let a = self.weights[i] * ks[i];
            let b = kinv_ks[i] * ks[i] * T::of(2.0);
            for k in 0..d {
                // ∂k_i/∂x_k = −k_i (x_k − x_ik)/ℓ_k²
                let dk = (self.inputs[(i, k)] - x[k]) / ls2[k];
                grad_mean[k] += a * dk;
                grad_var[k] -= b * dk;
            }
        }
        let mean = self.mean.eval(x) + ks.dot(&self.weights);
        let var = (self.kernel.variance() - ks.dot(&kinv_ks)).max(T::zero());
        PointPrediction { mean, var, grad_mean, grad_var }
    }

    /// `L⁻¹ K(X, Q)` and the predictive means at the rows of `query`.
    fn conditioned(&self, query: &DMatrix<T>) -> (DVector<T>, DMatrix<T>, DMatrix<T>) {
        let sq = self.kernel.scale_rows(query);
        let cross = self.kernel.cross_scaled(&self.scaled_inputs, &sq);
        let mu = self.mean.eval_rows(query) + cross.tr_mul(&self.weights);
        let v = self.chol.l_dirty().solve_lower_triangular(&cross).expect("Cholesky factor has a positive diagonal");
        (mu, v, sq)
    }

    /// Joint predictive mean and covariance at the rows of `query`.
    pub fn gp_posterior(&self, query: &DMatrix<T>) -> (DVector<T>, DMatrix<T>) {
        let (mu, v, sq) = self.conditioned(query);
        let mut sigma = self.kernel.cross_scaled(&sq, &sq) - v.tr_mul(&v);
        symmetrize(&mut sigma);
        (mu, sigma)
    }

    /// Joint realisations of the surrogate at the rows of `query`. Pivoted Cholesky
    /// never forms the full predictive covariance.
    pub fn sample_at(&self, query: &DMatrix<T>, m_count: usize, seed: u64, method: Factorization) -> Result<Realisations<T>> {
        match method {
            Factorization::PivotedCholesky => {
                let (mu, v, sq) = self.conditioned(query);
                let w = self.kernel.variance();
                let diag: Vec<T> = v.column_iter().map(|c| w - c.dot(&c)).collect();
                let half = T::of(0.5);
                let column = |j: usize| {
                    let vj = v.column(j);
                    DVector::from_fn(sq.nrows(), |i, _| {
                        let mut s = T::zero();
                        for k in 0..sq.ncols() {
                            let u = sq[(i, k)] - sq[(j, k)];
                            s += u * u;
                        }
                        w * (-half * s).exp() - v.column(i).dot(&vj)
                    })
                };
                let factor = pivoted_cholesky_with(diag, column, T::of(super::realise::RANK_TOLERANCE), usize::MAX);
                Ok(realisations_from_factor(&mu, &factor, m_count, seed))
            }
            _ => {
                let (mu, sigma) = self.gp_posterior(query);
                sample_realisations(&mu, &sigma, m_count, seed, method)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> GpSurrogate<f64> {
        let x = DMatrix::<f64>::from_column_slice(5, 1, &[-1.0, -0.5, 0.0, 0.5, 1.0]);
        let y = x.column(0).map(|v| -v * v + 0.1 * (3.0 * v).sin());
        let kernel = KernelParams::new(0.3, DVector::from_vec(vec![0.6]), 1e-10).unwrap();
        let mean = MeanParams::uncentred(0.0, DVector::zeros(1), -1.0, DMatrix::identity(1, 1)).unwrap();
        GpSurrogate::assemble(x, y, kernel, mean, FitDiagnostics::default()).unwrap()
    }

    #[test]
    fn interpolates_training_points() {
        let s = toy();
        for i in 0..5 {
            let x = s.inputs().row(i).transpose();
            let (mu, var) = s.predict(&x);
            assert!((mu - s.targets()[i]).abs() < 1e-6);
            assert!(var < 1e-6);
        }
    }

    #[test]
    fn gradients_match_differences() {
        let s = toy();
        let x = DVector::from_vec(vec![0.37]);
        let p = s.predict_with_grad(&x);
        let h = 1e-6;
        let (mp, vp) = s.predict(&DVector::from_vec(vec![0.37 + h]));
        let (mm, vm) = s.predict(&DVector::from_vec(vec![0.37 - h]));
        assert!(((mp - mm) / (2.0 * h) - p.grad_mean[0]).abs() < 1e-6);
        assert!(((vp - vm) / (2.0 * h) - p.grad_var[0]).abs() < 1e-6);
        let (mu, var) = s.predict(&x);
        assert!((mu - p.mean).abs() < 1e-12 && (var - p.var).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let s = toy();
        let text = serde_json::to_string(&s).unwrap();
        let back: GpSurrogate<f64> = serde_json::from_str(&text).unwrap();
        let x = DVector::from_vec(vec![0.123]);
        assert_eq!(s.predict(&x), back.predict(&x));
    }

    #[test]
    fn lazy_and_dense_sampling_agree_in_covariance() {
        let s = toy();
        let q = DMatrix::from_column_slice(3, 1, &[-0.75, 0.25, 2.0]);
        let (_, sigma) = s.gp_posterior(&q);
        let r = s.sample_at(&q, 20_000, 5, Factorization::PivotedCholesky).unwrap();
        let emp = crate::linalg::sample_covariance(&r.values);
        assert!((emp - &sigma).amax() < 0.05 * sigma.amax(), "{sigma}");
    }
}
