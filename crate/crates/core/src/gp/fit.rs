use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::kernel::KernelParams;
use super::mean::MeanParams;
use super::surrogate::{FitDiagnostics, GpSurrogate};
use crate::error::{Error, Result};
use crate::hmc::ChainRecord;
use crate::linalg::{column_means, inverse_from_cholesky, ridged, sample_covariance};
use crate::optim::{minimize_box, LbfgsOptions};
use crate::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Optimizer starts, including the deterministic one.
    pub restarts: usize,
    pub max_iter: usize,
    /// Initial jitter relative to ω².
    pub jitter: f64,
    pub max_jitter: f64,
    /// Upper bound on the kernel amplitude ω as a multiple of the target standard deviation.
    pub max_amplitude: f64,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { restarts: 5, max_iter: 200, jitter: 1e-8, max_jitter: 1e-4, max_amplitude: 1e3, seed: 0 }
    }
}

/// Value of the log marginal likelihood and its gradient in log-parameter space.
#[derive(Debug, Clone)]
pub struct LmlEval<T: Real> {
    pub value: f64,
    pub grad: DVector<f64>,
    /// Generalised least-squares estimate of `(β0, β1)`.
    pub beta_hat: DVector<T>,
    /// Absolute jitter used.
    pub jitter: T,
}

/// Log marginal likelihood of noiseless targets with `β0, β1` integrated out under a flat prior.
///
/// Parameters are `η = (log ω, log ℓ_1..d, log(−β2))`.
pub struct MarginalLikelihood<T: Real> {
    targets: DVector<T>,
    center: DVector<T>,
    quad: DVector<T>,
    basis: DMatrix<T>,
    sq_diffs: Vec<DMatrix<T>>,
    jitter: f64,
    max_jitter: f64,
}

impl<T: Real> MarginalLikelihood<T> {
    pub fn new(inputs: &DMatrix<T>, targets: &DVector<T>, center: DVector<T>, scale_matrix: DMatrix<T>) -> Result<Self> {
        let (j, d) = inputs.shape();
        if targets.len() != j || center.len() != d || scale_matrix.shape() != (d, d) {
            return Err(Error::InvalidInput("marginal likelihood inputs disagree in shape".into()));
        }
        let mean = MeanParams::new(T::zero(), DVector::zeros(d), -T::one(), scale_matrix, center.clone())?;
        let quad = DVector::from_iterator(j, inputs.row_iter().map(|r| mean.quad_form(&r.transpose())));
        let basis = DMatrix::from_fn(j, d + 1, |i, k| if k == 0 { T::one() } else { inputs[(i, k - 1)] - center[k - 1] });
        let sq_diffs = (0..d)
            .map(|k| {
                DMatrix::from_fn(j, j, |a, b| {
                    let u = inputs[(a, k)] - inputs[(b, k)];
                    u * u
                })
            })
            .collect();
        Ok(Self {
            targets: targets.clone(),
            center,
            quad,
            basis,
            sq_diffs,
            jitter: 1e-8,
            max_jitter: 1e-4,
        })
    }

    pub fn with_jitter(mut self, start: f64, max: f64) -> Self {
        self.jitter = start;
        self.max_jitter = max;
        self
    }

    pub fn n_params(&self) -> usize {
        self.center.len() + 2
    }

    pub fn evaluate(&self, eta: &DVector<f64>) -> Result<LmlEval<T>> {
        let d = self.center.len();
        let j = self.targets.len();
        if eta.len() != d + 2 || eta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("bad hyperparameter vector".into()));
        }
        let w2 = T::of((2.0 * eta[0]).exp());
        let inv_l2: Vec<T> = (0..d).map(|k| T::of((-2.0 * eta[1 + k]).exp())).collect();
        let beta2 = -T::of(eta[d + 1].exp());
        let half = T::of(0.5);

        let mut kse = DMatrix::zeros(j, j);
        for a in 0..j {
            for b in 0..=a {
                let mut s = T::zero();
                for (k, il) in inv_l2.iter().enumerate() {
                    s += self.sq_diffs[k][(a, b)] * *il;
                }
                let v = (-half * s).exp();
                kse[(a, b)] = v;
                kse[(b, a)] = v;
            }
        }
        let mut rel = self.jitter;
        let (chol, kfull) = loop {
            let mut k = &kse * w2;
            for i in 0..j {
                k[(i, i)] += w2 * T::of(rel);
            }
            if let Some(ch) = k.clone().cholesky() {
                break (ch, k);
            }
            if rel >= self.max_jitter {
                return Err(Error::Factorization(format!("kernel matrix not factorizable with jitter {rel:e}·ω²")));
            }
            rel = (rel * 10.0).min(self.max_jitter);
        };

        let r = &self.targets - &self.quad * beta2;
        let kinv_h = chol.solve(&self.basis);
        let a = self.basis.tr_mul(&kinv_h);
        let chol_a = a
            .cholesky()
            .ok_or_else(|| Error::Factorization("basis Gram matrix is singular".into()))?;
        let beta_hat = chol_a.solve(&kinv_h.tr_mul(&r));
        let resid = &r - &self.basis * &beta_hat;
        let alpha = chol.solve(&resid);

        let log_diag = |m: &DMatrix<T>| (0..m.nrows()).map(|i| m[(i, i)].ln().as_f64()).sum::<f64>();
        let p = d + 1;
        let value = -0.5 * resid.dot(&alpha).as_f64() - log_diag(chol.l_dirty()) - log_diag(chol_a.l_dirty())
            - 0.5 * (j as f64 - p as f64) * (2.0 * std::f64::consts::PI).ln();

        // W = ααᵀ − P with P = K⁻¹ − K⁻¹H A⁻¹ HᵀK⁻¹.
        let proj = &kinv_h * chol_a.inverse() * kinv_h.transpose();
        let w = &alpha * alpha.transpose() - inverse_from_cholesky(&chol) + proj;
        let mut grad = DVector::zeros(d + 2);
        grad[0] = w.component_mul(&kfull).sum().as_f64();
        for k in 0..d {
            let mut s = T::zero();
            for b in 0..j {
                for a in 0..j {
                    s += w[(a, b)] * kse[(a, b)] * self.sq_diffs[k][(a, b)];
                }
            }
            grad[1 + k] = (half * w2 * s * inv_l2[k]).as_f64();
        }
        grad[d + 1] = (beta2 * alpha.dot(&self.quad)).as_f64();
        Ok(LmlEval { value, grad, beta_hat, jitter: w2 * T::of(rel) })
    }
}

fn check_training_set<T: Real>(inputs: &DMatrix<T>, targets: &DVector<T>) -> Result<()> {
    let (j, d) = inputs.shape();
    if targets.len() != j {
        return Err(Error::InvalidInput(format!("{j} training inputs but {} targets", targets.len())));
    }
    if j < d + 2 {
        return Err(Error::InvalidInput(format!("need at least {} training points in dimension {d}, got {j}", d + 2)));
    }
    if inputs.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("training data contain non-finite values".into()));
    }
    let mut seen = HashSet::new();
    for (i, row) in inputs.row_iter().enumerate() {
        if !seen.insert(row.iter().map(|v| v.as_f64().to_bits()).collect::<Vec<_>>()) {
            return Err(Error::InvalidInput(format!("training input {i} duplicates an earlier row")));
        }
    }
    Ok(())
}

/// Least-squares fit of `[1, x − c, q]`; returns the quadratic coefficient and residual sd.
fn quadratic_least_squares<T: Real>(ml: &MarginalLikelihood<T>) -> (f64, f64) {
    let j = ml.targets.len();
    let p = ml.basis.ncols();
    let design = DMatrix::from_fn(j, p + 1, |i, k| if k < p { ml.basis[(i, k)].as_f64() } else { ml.quad[i].as_f64() });
    let y = DVector::from_iterator(j, ml.targets.iter().map(|v| v.as_f64()));
    match design.clone().svd(true, true).solve(&y, 1e-12) {
        Ok(coef) => {
            let resid = &y - &design * &coef;
            let sd = (resid.dot(&resid) / j as f64).sqrt();
            (coef[p], sd)
        }
        Err(_) => (-0.5, 0.0),
    }
}

fn sd(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt()
}

/// Fits a surrogate to training pairs `(x_j, ℓ(x_j))`.
pub fn fit_surrogate<T: Real>(inputs: &DMatrix<T>, targets: &DVector<T>, opts: &FitOptions) -> Result<GpSurrogate<T>> {
    check_training_set(inputs, targets)?;
    let d = inputs.ncols();
    let center = column_means(inputs);
    let (scale_matrix, _) = ridged(&sample_covariance(inputs), T::of(1e-10))?;
    let ml = MarginalLikelihood::new(inputs, targets, center.clone(), scale_matrix.clone())?.with_jitter(opts.jitter, opts.max_jitter);

    let sd_l = sd(targets.iter().map(|v| v.as_f64())).max(1e-8);
    let sd_x: Vec<f64> = (0..d).map(|k| scale_matrix[(k, k)].as_f64().sqrt()).collect();
    let (b2_ls, resid_sd) = quadratic_least_squares(&ml);

    let mut lower = DVector::zeros(d + 2);
    let mut upper = DVector::zeros(d + 2);
    lower[0] = (1e-6 * sd_l).ln();
    upper[0] = (opts.max_amplitude * sd_l).ln();
    for k in 0..d {
        lower[1 + k] = (1e-2 * sd_x[k]).ln();
        upper[1 + k] = (1e2 * sd_x[k]).ln();
    }
    lower[d + 1] = 1e-6f64.ln();
    upper[d + 1] = 1e6f64.ln();

    let mut init = DVector::zeros(d + 2);
    init[0] = resid_sd.max(1e-3 * sd_l).ln();
    for k in 0..d {
        init[1 + k] = sd_x[k].ln();
    }
    init[d + 1] = if b2_ls < 0.0 && b2_ls.is_finite() { (-b2_ls).ln() } else { 0.5f64.ln() };
    let clamp = |x: DVector<f64>| DVector::from_fn(d + 2, |i, _| x[i].clamp(lower[i], upper[i]));

    let mut rng = crate::rng::seeded(opts.seed);
    let lbfgs = LbfgsOptions { max_iter: opts.max_iter, ..Default::default() };
    let objective = |eta: &DVector<f64>| match ml.evaluate(eta) {
        Ok(e) => (-e.value, -e.grad),
        Err(_) => (f64::NAN, DVector::from_element(eta.len(), f64::NAN)),
    };

    let restarts = opts.restarts.max(1);
    let mut best: Option<crate::optim::Minimum> = None;
    let mut failed = 0;
    let mut iterations = 0;
    for start in 0..restarts {
        let x0 = if start == 0 {
            clamp(init.clone())
        } else {
            let noise = DVector::from_fn(d + 2, |_, _| rng.sample::<f64, _>(StandardNormal));
            clamp(&init + noise)
        };
        match minimize_box(objective, &x0, &lower, &upper, &lbfgs) {
            Some(m) => {
                iterations += m.iterations;
                if best.as_ref().is_none_or(|b| m.value < b.value) {
                    best = Some(m);
                }
            }
            None => failed += 1,
        }
    }
    let best = best.ok_or_else(|| Error::Optimizer {
        restarts,
        best_lml: f64::NEG_INFINITY,
        message: "log marginal likelihood was not finite at any starting point".into(),
    })?;
    let fitted = ml.evaluate(&best.x)?;
    let omega = T::of(best.x[0].exp());
    let lengthscales = DVector::from_fn(d, |k, _| T::of(best.x[1 + k].exp()));
    let beta2 = -T::of(best.x[d + 1].exp());
    assert!(beta2 < T::zero(), "quadratic coefficient must stay negative");
    let kernel = KernelParams::new(omega, lengthscales, fitted.jitter)?;
    let beta1 = fitted.beta_hat.rows(1, d).into_owned();
    let mean = MeanParams::new(fitted.beta_hat[0], beta1, beta2, scale_matrix, center)?;
    let diagnostics = FitDiagnostics {
        log_marginal_likelihood: fitted.value,
        log_params: best.x.iter().copied().collect(),
        restarts,
        failed_restarts: failed,
        iterations,
        converged: best.converged,
    };
    GpSurrogate::assemble(inputs.clone(), targets.clone(), kernel, mean, diagnostics)
}

/// Fits a surrogate to the post-adaptation rows of a processed chain.
pub fn fit_hyperparams<T: Real>(chain: &ChainRecord<T>, opts: &FitOptions) -> Result<GpSurrogate<T>> {
    let n = chain.len() - chain.warmup;
    let inputs = chain.draws.rows(chain.warmup, n).into_owned();
    let targets = DVector::from_column_slice(&chain.log_densities[chain.warmup..]);
    fit_surrogate(&inputs, &targets, opts)
}
