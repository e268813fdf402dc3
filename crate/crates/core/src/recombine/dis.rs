use nalgebra::DMatrix;
use rayon::prelude::*;

use super::weighted::{OverlapDiagnostics, WeightedSample};
use crate::error::{Error, Result};
use crate::targets::{Batch, Model, Subposterior};
use crate::{LogDensity, Real};

/// Distributed importance sampler over explicit per-batch densities.
///
/// Each batch evaluates its log-subposterior at all shared points in parallel; the
/// sums form the target and the weights are stabilised before normalisation.
pub fn run_dis_with<T, D>(points: &DMatrix<T>, log_q: &[f64], targets: &[D]) -> Result<WeightedSample<T>>
where
    T: Real,
    D: LogDensity<T> + Sync,
{
    let n = points.nrows();
    if log_q.len() != n {
        return Err(Error::InvalidInput(format!("{n} proposal points but {} proposal log-densities", log_q.len())));
    }
    if targets.is_empty() {
        return Err(Error::InvalidInput("no batch densities supplied".into()));
    }
    if let Some(i) = log_q.iter().position(|q| !q.is_finite()) {
        return Err(Error::InvalidInput(format!("proposal log-density is not finite at point {i}")));
    }
    let rows: Vec<_> = points.row_iter().map(|r| r.transpose()).collect();
    let per_batch: Vec<Vec<f64>> = targets
        .par_iter()
        .map(|t| rows.iter().map(|x| t.log_density(x).as_f64()).collect())
        .collect();
    let log_target: Vec<f64> = (0..n)
        .map(|i| {
            let s: f64 = per_batch.iter().map(|b| b[i]).sum();
            if s.is_nan() { f64::NEG_INFINITY } else { s }
        })
        .collect();
    let log_w: Vec<f64> = log_target.iter().zip(log_q).map(|(p, q)| p - q).collect();
    WeightedSample::from_log_weights(points.clone(), &log_w).map_err(|e| match e {
        Error::DegenerateWeights(_) | Error::InvalidInput(_) => {
            let diag = OverlapDiagnostics {
                n_points: n,
                finite_log_weights: log_w.iter().filter(|w| w.is_finite()).count(),
                max_log_weight: log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                max_log_target: log_target.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                max_log_proposal: log_q.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            };
            Error::DegenerateWeights(format!(
                "proposal does not overlap the posterior: {}",
                serde_json::to_string(&diag).unwrap_or_default()
            ))
        }
        other => other,
    })
}

/// Distributed importance sampler for a model split into batches.
pub fn run_dis<T: Real>(
    points: &DMatrix<T>,
    log_q: &[f64],
    model: &Model<T>,
    batches: &[Batch<T>],
) -> Result<WeightedSample<T>> {
    let c = batches.len();
    let subs = batches.iter().map(|b| Subposterior::new(model, b, c)).collect::<Result<Vec<_>>>()?;
    run_dis_with(points, log_q, &subs)
}
