use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::adapt::{find_reasonable_epsilon, DualAveraging};
use super::chain::{ChainBuilder, ChainRecord};
use super::integrator::{leapfrog_from, MassMatrix, PhasePoint};
use crate::error::{Error, Result};
use crate::linalg::{mean_diagonal, sample_covariance};
use crate::{LogDensity, Real};

pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct HmcConfig<T: Real> {
    /// Iterations kept after adaptation.
    pub n_iter: usize,
    pub leapfrog_steps: usize,
    pub step_size: T,
    #[serde(default)]
    pub mass_matrix: Option<DMatrix<T>>,
    pub adapt_iters: usize,
    pub target_accept: T,
    pub seed: u64,
    /// Estimate a dense metric from the middle of the adaptation phase.
    #[serde(default)]
    pub adapt_mass: bool,
    /// Relative half-width of the uniform jitter applied to ε on each iteration.
    #[serde(default)]
    pub step_jitter: T,
}

impl<T: Real> Default for HmcConfig<T> {
    fn default() -> Self {
        Self {
            n_iter: 10_000,
            leapfrog_steps: 20,
            step_size: T::of(0.1),
            mass_matrix: None,
            adapt_iters: 1_000,
            target_accept: T::of(0.65),
            seed: 0,
            adapt_mass: false,
            step_jitter: T::of(0.1),
        }
    }
}

impl<T: Real> HmcConfig<T> {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.leapfrog_steps == 0 {
            return Err(Error::Config("leapfrog_steps must be at least 1".into()));
        }
        if !(self.step_size > T::zero()) || !self.step_size.is_finite() {
            return Err(Error::Config("step_size must be positive".into()));
        }
        let ta = self.target_accept.as_f64();
        if !(ta > 0.0 && ta < 1.0) {
            return Err(Error::Config("target_accept must lie in (0, 1)".into()));
        }
        let j = self.step_jitter.as_f64();
        if !(0.0..1.0).contains(&j) {
            return Err(Error::Config("step_jitter must lie in [0, 1)".into()));
        }
        if let Some(m) = &self.mass_matrix {
            if m.nrows() != dim {
                return Err(Error::Config(format!("mass matrix is {}x{}, target dimension is {dim}", m.nrows(), m.ncols())));
            }
            MassMatrix::new(m.clone())?;
        }
        Ok(())
    }
}

/// Indices `[start, end)` of the adaptation iterations whose draws estimate the metric.
fn mass_window(adapt_iters: usize) -> Option<(usize, usize)> {
    if adapt_iters < 100 {
        return None;
    }
    let start = adapt_iters * 15 / 100;
    let end = adapt_iters - adapt_iters / 4;
    Some((start, end))
}

/// Sample covariance shrunk towards a scaled identity, regularising short windows.
fn regularised_covariance<T: Real>(draws: &DMatrix<T>) -> DMatrix<T> {
    let n = T::of_usize(draws.nrows());
    let cov = sample_covariance(draws);
    let scale = mean_diagonal(&cov).max(T::of(1e-12));
    let w = n / (n + T::of(5.0));
    let d = cov.nrows();
    cov * w + DMatrix::identity(d, d) * (scale * T::of(1e-3) * (T::one() - w))
}

pub fn run_hmc<T: Real, D: LogDensity<T> + ?Sized>(
    target: &D,
    config: &HmcConfig<T>,
    theta0: &DVector<T>,
) -> Result<ChainRecord<T>> {
    let d = target.dim();
    if theta0.len() != d {
        return Err(Error::InvalidInput(format!("start point has length {}, target dimension is {d}", theta0.len())));
    }
    config.validate(d)?;
    let (ld0, g0) = target.log_density_and_grad(theta0);
    if !ld0.is_finite() || g0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("target is not finite at the start point".into()));
    }

    let mut rng = crate::rng::seeded(config.seed);
    let mut mass = match &config.mass_matrix {
        Some(m) => MassMatrix::new(m.clone())?,
        None => MassMatrix::identity(d),
    };
    let mut current = PhasePoint { theta: theta0.clone(), momentum: DVector::zeros(d), log_density: ld0, grad: g0 };

    let adapt = config.adapt_iters;
    let target_accept = config.target_accept.as_f64();
    let mut eps0 = config.step_size.as_f64();
    if adapt > 0 {
        eps0 = find_reasonable_epsilon(target, &current.theta, eps0, &mass, &mut rng);
    }
    let mut da = DualAveraging::new(eps0, target_accept);
    let window = if config.adapt_mass { mass_window(adapt) } else { None };
    let mut window_draws: Vec<T> = Vec::new();

    let total = adapt + config.n_iter;
    let mut record = ChainBuilder::new(total, d, adapt);
    let mut adapt_divergent = 0usize;
    let mut sampling_eps = da.final_step_size();
    let jitter = config.step_jitter.as_f64();

    for i in 0..total {
        let base = if i < adapt { da.step_size() } else { sampling_eps };
        let eps = if jitter > 0.0 { base * (1.0 + jitter * (2.0 * rng.random::<f64>() - 1.0)) } else { base };

        let z = DVector::from_fn(d, |_, _| T::of(rng.sample(StandardNormal)));
        current.momentum = mass.momentum_from(&z);
        let h0 = current.hamiltonian(&mass);
        let (proposal, nonfinite) = leapfrog_from(target, &current, T::of(eps), config.leapfrog_steps, &mass);
        let delta = (proposal.hamiltonian(&mass) - h0).as_f64();
        let divergent = nonfinite || !delta.is_finite() || delta.abs() > DIVERGENCE_THRESHOLD;
        let accept_prob = if divergent { 0.0 } else { (-delta).exp().min(1.0) };
        let accepted = rng.random::<f64>() < accept_prob;
        if accepted {
            current = proposal;
        }
        record.push(&current.theta, current.log_density, accepted, divergent);

        if i < adapt {
            if divergent {
                adapt_divergent += 1;
            }
            da.update(accept_prob);
            if let Some((start, end)) = window {
                if i >= start && i < end {
                    window_draws.extend(current.theta.iter().copied());
                }
                if i + 1 == end {
                    let n = window_draws.len() / d;
                    let draws = DMatrix::from_row_slice(n, d, &window_draws);
                    if let Ok(m) = MassMatrix::from_covariance(&regularised_covariance(&draws)) {
                        mass = m;
                        let e = find_reasonable_epsilon(target, &current.theta, da.step_size(), &mass, &mut rng);
                        da = DualAveraging::new(e, target_accept);
                    }
                    window_draws.clear();
                }
            }
            if i + 1 == adapt {
                if adapt_divergent == adapt {
                    return Err(Error::AllDivergent { iterations: adapt, step_size: da.step_size() });
                }
                sampling_eps = da.final_step_size();
            }
        }
    }
    Ok(record.finish(T::of(sampling_eps), Some(mass.inverse().clone())))
}
