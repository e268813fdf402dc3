use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::weighted::WeightedSample;
use crate::error::{Error, Result};
use crate::gp::Factorization;
use crate::linalg::{log_sum_exp, quantile_sorted};
use crate::merge::{MergedGp, Proposal};
use crate::rng::{derive_seed, tag};
use crate::Real;

type Scalar<T> = dyn Fn(&DVector<T>) -> f64 + Send + Sync;

/// A named function `h(θ)` whose posterior expectation is estimated.
#[derive(Clone)]
pub struct Functional<T: Real> {
    pub name: String,
    f: Arc<Scalar<T>>,
}

impl<T: Real> fmt::Debug for Functional<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Functional").field("name", &self.name).finish()
    }
}

impl<T: Real> Functional<T> {
    pub fn new(name: impl Into<String>, f: impl Fn(&DVector<T>) -> f64 + Send + Sync + 'static) -> Self {
        Self { name: name.into(), f: Arc::new(f) }
    }

    /// `θ_i`, zero-based.
    pub fn mean(i: usize) -> Self {
        Self::new(format!("E[theta_{}]", i + 1), move |x: &DVector<T>| x[i].as_f64())
    }

    /// `θ_i²`, zero-based.
    pub fn second_moment(i: usize) -> Self {
        Self::new(format!("E[theta_{}^2]", i + 1), move |x: &DVector<T>| x[i].as_f64().powi(2))
    }

    pub fn eval(&self, x: &DVector<T>) -> f64 {
        (self.f)(x)
    }
}

/// Spread of `Î_h(ℓ_m)` over realisations, plus the mean-weight estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalSummary {
    pub name: String,
    /// Estimate under the realisation-averaged weights.
    pub estimate: f64,
    pub mean: f64,
    pub median: f64,
    pub q025: f64,
    pub q975: f64,
}

#[derive(Debug, Clone)]
pub struct GpIsResult<T: Real> {
    pub weighted: WeightedSample<T>,
    /// `estimates[h][m] = Î_h(ℓ_m)`.
    pub per_realisation_estimates: Vec<Vec<f64>>,
    pub summary: Vec<FunctionalSummary>,
    /// `log Ẑ(ℓ_m)` per realisation.
    pub log_z: Vec<f64>,
    /// Factor rank used for each batch surrogate.
    pub ranks: Vec<usize>,
}

impl<T: Real> GpIsResult<T> {
    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.summary)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpIsConfig {
    pub n_points: usize,
    pub m_realisations: usize,
    pub seed: u64,
    #[serde(default)]
    pub factorization: Factorization,
}

impl Default for GpIsConfig {
    fn default() -> Self {
        Self { n_points: 5000, m_realisations: 500, seed: 0, factorization: Factorization::default() }
    }
}

fn summarise(name: &str, estimate: f64, values: &[f64]) -> FunctionalSummary {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    FunctionalSummary {
        name: name.to_string(),
        estimate,
        mean: values.iter().sum::<f64>() / values.len() as f64,
        median: quantile_sorted(&sorted, 0.5),
        q025: quantile_sorted(&sorted, 0.025),
        q975: quantile_sorted(&sorted, 0.975),
    }
}

/// GP importance sampler: weights iid proposal draws by joint realisations of the merged GP.
pub fn run_gp_is<T: Real, P: Proposal<T>>(
    merged: &MergedGp<T>,
    proposal: &P,
    config: &GpIsConfig,
    functionals: &[Functional<T>],
) -> Result<GpIsResult<T>> {
    let (n, m_count) = (config.n_points, config.m_realisations);
    if n == 0 || m_count == 0 {
        return Err(Error::Config("GP-IS needs at least one point and one realisation".into()));
    }
    if proposal.dim() != merged.dim() {
        return Err(Error::InvalidInput(format!(
            "proposal dimension {} differs from merged GP dimension {}",
            proposal.dim(),
            merged.dim()
        )));
    }
    let mut rng = crate::rng::stream(config.seed, tag::PROPOSAL, 0);
    let points = proposal.sample(n, &mut rng);
    let rows: Vec<DVector<T>> = points.row_iter().map(|r| r.transpose()).collect();
    let log_q: Vec<f64> = rows.iter().map(|x| proposal.log_density(x).as_f64()).collect();
    if let Some(i) = log_q.iter().position(|q| !q.is_finite()) {
        return Err(Error::InvalidInput(format!("proposal log-density is not finite at draw {i}")));
    }

    // Independent batch GPs: the merged realisation is the sum of per-batch realisations.
    let mut total = DMatrix::<f64>::zeros(m_count, n);
    let mut ranks = Vec::with_capacity(merged.n_batches());
    for (c, s) in merged.surrogates().iter().enumerate() {
        let seed = derive_seed(config.seed, tag::REALISATION, c as u64);
        let r = s.sample_at(&points, m_count, seed, config.factorization)?;
        ranks.push(r.rank);
        total.zip_apply(&r.values, |acc, v| *acc += v.as_f64());
    }

    let h_values: Vec<Vec<f64>> = functionals.iter().map(|h| rows.iter().map(|x| h.eval(x)).collect()).collect();
    let ln_n = (n as f64).ln();
    let per_m: Vec<(f64, Vec<f64>, Vec<f64>)> = (0..m_count)
        .into_par_iter()
        .map(|m| {
            let log_w: Vec<f64> = (0..n).map(|i| total[(m, i)] - log_q[i]).collect();
            let lse = log_sum_exp(&log_w);
            let w: Vec<f64> = log_w.iter().map(|v| (v - lse).exp()).collect();
            let est = h_values.iter().map(|hv| hv.iter().zip(&w).map(|(h, w)| h * w).sum()).collect();
            (lse - ln_n, w, est)
        })
        .collect();
    if per_m.iter().any(|(lz, _, _)| !lz.is_finite()) {
        return Err(Error::DegenerateWeights("a GP realisation gave all-zero importance weights".into()));
    }

    // w_i ∝ (1/(M q_i)) Σ_m exp ℓ_m(θ_i) / Ẑ(ℓ_m) = (N/M) Σ_m ŵ_{m,i}
    let mut mean_w = vec![0.0; n];
    for (_, w, _) in &per_m {
        for (acc, v) in mean_w.iter_mut().zip(w) {
            *acc += v;
        }
    }
    let log_mean_w: Vec<f64> = mean_w.iter().map(|v| (v / m_count as f64).ln()).collect();
    let mut weighted = WeightedSample::from_log_weights(points, &log_mean_w)?;
    let log_z: Vec<f64> = per_m.iter().map(|(lz, _, _)| *lz).collect();
    weighted.log_z_hat = log_sum_exp(&log_z) - (m_count as f64).ln();

    let per_realisation_estimates: Vec<Vec<f64>> =
        (0..functionals.len()).map(|h| per_m.iter().map(|(_, _, e)| e[h]).collect()).collect();
    let summary = functionals
        .iter()
        .zip(&per_realisation_estimates)
        .zip(&h_values)
        .map(|((f, vals), hv)| {
            let estimate = hv.iter().zip(&weighted.weights).map(|(h, w)| h * w).sum();
            summarise(&f.name, estimate, vals)
        })
        .collect();
    Ok(GpIsResult { weighted, per_realisation_estimates, summary, log_z, ranks })
}
