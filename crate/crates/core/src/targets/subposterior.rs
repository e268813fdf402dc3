use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::model::{logistic, softplus};
use super::{Batch, Dataset, Model};
use crate::density::LogDensity;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Per-batch data in the form each model's likelihood needs.
#[derive(Clone, Debug)]
enum BatchData<T: Real> {
    /// Gaussian likelihoods: count, column means and the centred sum of squares.
    Gaussian { m: usize, mean: DVector<T>, centred_ss: T },
    /// Bernoulli sufficient statistics.
    Counts { m: usize, successes: T },
    /// Raw rows, row-major, `width` values per row.
    Points { values: Vec<T>, width: usize },
    Regression { design: DMatrix<T>, labels: DVector<T> },
}

/// `log p(𝒴_c | θ) + (1/C) log p(θ)` for one batch, with analytic gradient.
///
/// With `c_total = 1` and the whole dataset this is the full log-posterior.
/// Normalising constants of the likelihood and prior are included.
#[derive(Clone, Debug)]
pub struct Subposterior<T: Real> {
    model: Model<T>,
    data: BatchData<T>,
    c_total: usize,
    prior_weight: T,
    batch_id: usize,
    n_obs: usize,
}

impl<T: Real> Subposterior<T> {
    pub fn new(model: &Model<T>, batch: &Batch<T>, c_total: usize) -> Result<Self> {
        model.validate()?;
        if c_total == 0 {
            return Err(Error::Config("number of batches must be at least 1".into()));
        }
        let dataset = &batch.parent;
        if dataset.p() != model.observation_width() {
            return Err(Error::InvalidInput(format!(
                "model {} expects {} observation columns, dataset has {}",
                model.name().as_str(),
                model.observation_width(),
                dataset.p()
            )));
        }
        if model.needs_responses() && dataset.responses().is_none() {
            return Err(Error::InvalidInput(format!(
                "model {} needs a response column",
                model.name().as_str()
            )));
        }
        let obs = batch.observations();
        let m = obs.nrows();
        let data = match model {
            Model::WarpedGaussian { .. } | Model::GaussianMean { .. } => {
                let mean = crate::linalg::column_means(&obs);
                let mut ss = T::zero();
                for i in 0..m {
                    for j in 0..obs.ncols() {
                        let r = obs[(i, j)] - mean[j];
                        ss += r * r;
                    }
                }
                BatchData::Gaussian { m, mean, centred_ss: ss }
            }
            Model::RareBernoulli { .. } => {
                if obs.iter().any(|&y| y != T::zero() && y != T::one()) {
                    return Err(Error::InvalidInput("Bernoulli observations must be 0 or 1".into()));
                }
                BatchData::Counts { m, successes: obs.sum() }
            }
            Model::GaussianMixture { .. } | Model::LaplaceMixture { .. } => {
                let width = obs.ncols();
                let mut values = Vec::with_capacity(m * width);
                for i in 0..m {
                    for j in 0..width {
                        values.push(obs[(i, j)]);
                    }
                }
                BatchData::Points { values, width }
            }
            Model::LogisticRegression { .. } => {
                let labels = batch.responses().expect("checked above");
                if labels.iter().any(|&y| y != T::zero() && y != T::one()) {
                    return Err(Error::InvalidInput("logistic responses must be 0 or 1".into()));
                }
                BatchData::Regression { design: obs, labels }
            }
        };
        Ok(Self {
            model: model.clone(),
            data,
            c_total,
            prior_weight: T::one() / T::of_usize(c_total),
            batch_id: batch.batch_id,
            n_obs: m,
        })
    }

    /// Full-data posterior (one batch, unfractionated prior).
    pub fn full(model: &Model<T>, data: &Arc<Dataset<T>>) -> Result<Self> {
        Self::new(model, &data.whole(), 1)
    }

    pub fn model(&self) -> &Model<T> {
        &self.model
    }

    pub fn batch_id(&self) -> usize {
        self.batch_id
    }

    pub fn c_total(&self) -> usize {
        self.c_total
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    /// Value and (optionally) gradient through one code path, so the value is
    /// bit-identical whether or not the gradient was requested.
    fn eval(&self, theta: &DVector<T>, want_grad: bool) -> (T, Option<DVector<T>>) {
        let d = self.model.dim();
        assert_eq!(theta.len(), d, "parameter dimension mismatch");
        let mut grad = if want_grad { Some(DVector::zeros(d)) } else { None };
        let half = T::of(0.5);
        let two_pi = T::two_pi();

        let loglik = match (&self.model, &self.data) {
            (Model::WarpedGaussian { sigma2, .. }, BatchData::Gaussian { m, mean, centred_ss }) => {
                let mf = T::of_usize(*m);
                let loc = theta[0] + theta[1] * theta[1];
                let gap = mean[0] - loc;
                let value = -half * mf * (two_pi * *sigma2).ln() - (*centred_ss + mf * gap * gap) / (T::of(2.0) * *sigma2);
                if let Some(g) = grad.as_mut() {
                    let ds = mf * gap / *sigma2;
                    g[0] += ds;
                    g[1] += T::of(2.0) * theta[1] * ds;
                }
                value
            }
            (Model::GaussianMean { sigma2, .. }, BatchData::Gaussian { m, mean, centred_ss }) => {
                let mf = T::of_usize(*m);
                let gap = mean - theta;
                let value = -half * mf * T::of_usize(d) * (two_pi * *sigma2).ln()
                    - (*centred_ss + mf * gap.dot(&gap)) / (T::of(2.0) * *sigma2);
                if let Some(g) = grad.as_mut() {
                    g.axpy(mf / *sigma2, &gap, T::one());
                }
                value
            }
            (Model::RareBernoulli { .. }, BatchData::Counts { m, successes }) => {
                let phi = theta[0];
                let failures = T::of_usize(*m) - *successes;
                let value = -*successes * softplus(-phi) - failures * softplus(phi);
                if let Some(g) = grad.as_mut() {
                    g[0] += *successes - T::of_usize(*m) * logistic(phi);
                }
                value
            }
            (Model::GaussianMixture { .. }, BatchData::Points { values, width }) => {
                let log_half = half.ln();
                let norm = -two_pi.ln();
                let mut total = T::zero();
                for row in values.chunks_exact(*width) {
                    let (dy0, dy1) = (row[0] - theta[0], row[1] - theta[1]);
                    let (ez0, ez1) = (row[0] - theta[2], row[1] - theta[3]);
                    let la = log_half - half * (dy0 * dy0 + dy1 * dy1);
                    let lb = log_half - half * (ez0 * ez0 + ez1 * ez1);
                    let hi = la.max(lb);
                    let lse = hi + ((la - hi).exp() + (lb - hi).exp()).ln();
                    total += norm + lse;
                    if let Some(g) = grad.as_mut() {
                        let ra = (la - lse).exp();
                        let rb = (lb - lse).exp();
                        g[0] += ra * dy0;
                        g[1] += ra * dy1;
                        g[2] += rb * ez0;
                        g[3] += rb * ez1;
                    }
                }
                total
            }
            (Model::LaplaceMixture { beta1, beta2, .. }, BatchData::Points { values, .. }) => {
                let th = theta[0];
                let c1 = (T::one() / (T::of(4.0) * *beta1)).ln();
                let c2 = (T::one() / (T::of(4.0) * *beta2)).ln();
                let mut total = T::zero();
                let mut slope = T::zero();
                for &y in values {
                    let u = y - th;
                    let v = y + th;
                    let l1 = c1 - u.absval() / *beta1;
                    let l2 = c2 - v.absval() / *beta2;
                    let hi = l1.max(l2);
                    let lse = hi + ((l1 - hi).exp() + (l2 - hi).exp()).ln();
                    total += lse;
                    if want_grad {
                        let r1 = (l1 - lse).exp();
                        let r2 = (l2 - lse).exp();
                        slope += r1 * sign(u) / *beta1 - r2 * sign(v) / *beta2;
                    }
                }
                if let Some(g) = grad.as_mut() {
                    g[0] += slope;
                }
                total
            }
            (Model::LogisticRegression { .. }, BatchData::Regression { design, labels }) => {
                let eta = design * theta;
                let mut total = T::zero();
                for i in 0..eta.len() {
                    total += labels[i] * eta[i] - softplus(eta[i]);
                }
                if let Some(g) = grad.as_mut() {
                    let resid = DVector::from_iterator(eta.len(), (0..eta.len()).map(|i| labels[i] - logistic(eta[i])));
                    g.gemv_tr(T::one(), design, &resid, T::one());
                }
                total
            }
            _ => unreachable!("batch data built for a different model"),
        };

        let (log_prior, prior_grad) = self.log_prior(theta, want_grad);
        let value = loglik + self.prior_weight * log_prior;
        if let (Some(g), Some(pg)) = (grad.as_mut(), prior_grad) {
            g.axpy(self.prior_weight, &pg, T::one());
        }
        (value, grad)
    }

    /// Unfractionated log-prior on the sampling scale (including the logit
    /// Jacobian for the Bernoulli model).
    fn log_prior(&self, theta: &DVector<T>, want_grad: bool) -> (T, Option<DVector<T>>) {
        let half = T::of(0.5);
        let gaussian = |var: T| {
            let mut v = T::zero();
            let norm = -half * (T::two_pi() * var).ln();
            for &t in theta.iter() {
                v += norm - half * t * t / var;
            }
            let g = want_grad.then(|| theta / (-var));
            (v, g)
        };
        match &self.model {
            Model::WarpedGaussian { prior_var, .. }
            | Model::GaussianMixture { prior_var }
            | Model::LogisticRegression { prior_var, .. }
            | Model::LaplaceMixture { prior_var, .. }
            | Model::GaussianMean { prior_var, .. } => gaussian(*prior_var),
            Model::RareBernoulli { prior_a, prior_b } => {
                let phi = theta[0];
                let ln_beta = T::of(statrs::function::beta::ln_beta(prior_a.as_f64(), prior_b.as_f64()));
                // Beta(a, b) density at logistic(φ) times the Jacobian θ(1 − θ).
                let v = -ln_beta - *prior_a * softplus(-phi) - *prior_b * softplus(phi);
                let g = want_grad.then(|| {
                    let p = logistic(phi);
                    DVector::from_element(1, *prior_a * (T::one() - p) - *prior_b * p)
                });
                (v, g)
            }
        }
    }
}

fn sign<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

impl<T: Real> LogDensity<T> for Subposterior<T> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn log_density(&self, theta: &DVector<T>) -> T {
        self.eval(theta, false).0
    }

    fn log_density_and_grad(&self, theta: &DVector<T>) -> (T, DVector<T>) {
        let (v, g) = self.eval(theta, true);
        (v, g.expect("gradient requested"))
    }
}

fn check_theta<T: Real>(model: &Model<T>, theta: &DVector<T>) -> Result<()> {
    if theta.len() != model.dim() {
        return Err(Error::InvalidInput(format!(
            "parameter has length {}, model expects {}",
            theta.len(),
            model.dim()
        )));
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("parameter is not finite".into()));
    }
    Ok(())
}

/// Log-subposterior of one batch with the prior raised to `1/c_total`.
pub fn log_subposterior<T: Real>(
    model: &Model<T>,
    batch: &Batch<T>,
    theta: &DVector<T>,
    c_total: usize,
) -> Result<T> {
    check_theta(model, theta)?;
    let target = Subposterior::new(model, batch, c_total)?;
    let v = target.log_density(theta);
    if !v.is_finite() {
        return Err(Error::Domain(format!(
            "log-subposterior is not finite at {:?}",
            theta.as_slice()
        )));
    }
    Ok(v)
}

pub fn grad_log_subposterior<T: Real>(
    model: &Model<T>,
    batch: &Batch<T>,
    theta: &DVector<T>,
    c_total: usize,
) -> Result<DVector<T>> {
    check_theta(model, theta)?;
    let target = Subposterior::new(model, batch, c_total)?;
    let (v, g) = target.log_density_and_grad(theta);
    if !v.is_finite() || g.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain(format!(
            "log-subposterior gradient is not finite at {:?}",
            theta.as_slice()
        )));
    }
    Ok(g)
}

pub fn full_log_posterior<T: Real>(
    model: &Model<T>,
    data: &Arc<Dataset<T>>,
    theta: &DVector<T>,
) -> Result<T> {
    log_subposterior(model, &data.whole(), theta, 1)
}
