//! Discrepancies between an approximate posterior sample and a reference sample.
use std::collections::HashSet;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{column_means, log_det_from_cholesky, ridged_cholesky, sample_covariance};

const RIDGE: f64 = 1e-10;
const KNN_MIN_POINTS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// `D(π̂ ‖ π)`: approximation relative to the reference.
    Forward,
    /// `D(π ‖ π̂)`.
    Reverse,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyReport {
    pub mahalanobis: f64,
    pub kl_gaussian_fwd: f64,
    pub kl_gaussian_rev: f64,
    pub kl_knn_fwd: Option<f64>,
    pub kl_knn_rev: Option<f64>,
    pub concentration_rho: Option<f64>,
    pub skew_eta: f64,
    /// A covariance needed a ridge before inversion.
    pub ridged: bool,
    /// Kept out of the serialised report so reruns compare byte for byte.
    #[serde(skip)]
    pub wall_time_seconds: f64,
}

fn check(sample: &DMatrix<f64>, what: &str) -> Result<()> {
    if sample.ncols() == 0 {
        return Err(Error::InvalidInput(format!("{what} sample has zero columns")));
    }
    if sample.nrows() < 2 {
        return Err(Error::InvalidInput(format!("{what} sample needs at least two rows")));
    }
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("{what} sample contains non-finite values")));
    }
    Ok(())
}

fn check_pair(reference: &DMatrix<f64>, approx: &DMatrix<f64>) -> Result<()> {
    check(reference, "reference")?;
    check(approx, "approximate")?;
    if reference.ncols() != approx.ncols() {
        return Err(Error::InvalidInput(format!(
            "reference has dimension {}, approximation {}",
            reference.ncols(),
            approx.ncols()
        )));
    }
    Ok(())
}

struct Moments {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    ridged: bool,
}

fn moments(sample: &DMatrix<f64>) -> Result<Moments> {
    let cov = sample_covariance(sample);
    let (chol, ridged) = ridged_cholesky(&cov, RIDGE)?;
    Ok(Moments { mean: column_means(sample), cov, chol, ridged })
}

/// `√((m_a − m_f)ᵀ V_f⁻¹ (m_a − m_f))`.
pub fn mahalanobis(reference: &DMatrix<f64>, approx: &DMatrix<f64>) -> Result<f64> {
    check_pair(reference, approx)?;
    let f = moments(reference)?;
    let diff = column_means(approx) - &f.mean;
    Ok(diff.dot(&f.chol.solve(&diff)).max(0.0).sqrt())
}

/// KL divergence between `N(m_p, V_p)` and `N(m_q, V_q)`.
fn gaussian_kl(p: &Moments, q: &Moments) -> f64 {
    if p.mean == q.mean && p.cov == q.cov {
        return 0.0;
    }
    let d = p.mean.len() as f64;
    let diff = &q.mean - &p.mean;
    let trace = q.chol.solve(&p.cov).trace();
    let maha = diff.dot(&q.chol.solve(&diff));
    0.5 * (trace + maha - d - (log_det_from_cholesky(&p.chol) - log_det_from_cholesky(&q.chol)))
}

/// Gaussian KL from empirical moments; the flag reports a ridge.
pub fn kl_gaussian(reference: &DMatrix<f64>, approx: &DMatrix<f64>, direction: Direction) -> Result<(f64, bool)> {
    check_pair(reference, approx)?;
    let f = moments(reference)?;
    let a = moments(approx)?;
    let ridged = f.ridged || a.ridged;
    let kl = match direction {
        Direction::Forward => gaussian_kl(&a, &f),
        Direction::Reverse => gaussian_kl(&f, &a),
    };
    Ok((kl, ridged))
}

fn row_key(row: &[f64]) -> Vec<u64> {
    row.iter().map(|v| v.to_bits()).collect()
}

fn unique_rows(sample: &DMatrix<f64>) -> Vec<Vec<f64>> {
    let mut seen = HashSet::new();
    sample
        .row_iter()
        .map(|r| r.iter().copied().collect::<Vec<_>>())
        .filter(|r| seen.insert(row_key(r)))
        .collect()
}

fn nearest_sq(x: &[f64], others: &[Vec<f64>], skip: Option<usize>) -> f64 {
    let mut best = f64::INFINITY;
    for (j, y) in others.iter().enumerate() {
        if Some(j) == skip {
            continue;
        }
        let mut s = 0.0;
        for (a, b) in x.iter().zip(y) {
            s += (a - b) * (a - b);
            if s >= best {
                break;
            }
        }
        if s < best {
            best = s;
        }
    }
    best
}

/// One-nearest-neighbour estimate of `D(P ‖ Q)` from samples of `P` and `Q`.
fn knn_divergence(p: &[Vec<f64>], q: &[Vec<f64>], d: usize) -> Result<f64> {
    let n = p.len() as f64;
    let m = q.len() as f64;
    let mut s = 0.0;
    for (i, x) in p.iter().enumerate() {
        let rho = nearest_sq(x, p, Some(i));
        let nu = nearest_sq(x, q, None);
        if rho == 0.0 || nu == 0.0 {
            return Err(Error::InvalidInput("zero nearest-neighbour distance after removing duplicates".into()));
        }
        s += 0.5 * (nu / rho).ln();
    }
    Ok(d as f64 * s / n + (m / (n - 1.0)).ln())
}

/// Nearest-neighbour KL estimate. Exact repeats are dropped within each sample and
/// points of the first sample that also occur in the second are dropped too.
/// The estimate can be slightly negative when the distributions agree.
pub fn kl_knn(reference: &DMatrix<f64>, approx: &DMatrix<f64>, direction: Direction) -> Result<f64> {
    check_pair(reference, approx)?;
    let (p_sample, q_sample) = match direction {
        Direction::Forward => (approx, reference),
        Direction::Reverse => (reference, approx),
    };
    let q = unique_rows(q_sample);
    let q_keys: HashSet<_> = q.iter().map(|r| row_key(r)).collect();
    let p: Vec<_> = unique_rows(p_sample).into_iter().filter(|r| !q_keys.contains(&row_key(r))).collect();
    if p.len() < KNN_MIN_POINTS || q.len() < KNN_MIN_POINTS {
        return Err(Error::InvalidInput(format!(
            "nearest-neighbour KL needs {KNN_MIN_POINTS} distinct points per sample, got {} and {}",
            p.len(),
            q.len()
        )));
    }
    knn_divergence(&p, &q, reference.ncols())
}

/// `√(Σ‖θ^a − θ*‖² / Σ‖θ^f − θ*‖²)` over equal-sized samples; the larger sample is
/// subsampled uniformly without replacement using `seed`.
pub fn concentration_ratio(reference: &DMatrix<f64>, approx: &DMatrix<f64>, theta_star: &DVector<f64>, seed: u64) -> Result<f64> {
    check_pair(reference, approx)?;
    if theta_star.len() != reference.ncols() {
        return Err(Error::InvalidInput("true parameter has the wrong dimension".into()));
    }
    let n = reference.nrows().min(approx.nrows());
    let mut rng = crate::rng::seeded(seed);
    let mut spread = |s: &DMatrix<f64>| -> f64 {
        let rows: Vec<usize> = if s.nrows() > n {
            let mut idx = sample_indices(&mut rng, s.nrows(), n).into_vec();
            idx.sort_unstable();
            idx
        } else {
            (0..n).collect()
        };
        rows.iter().map(|&i| (s.row(i).transpose() - theta_star).norm_squared()).sum()
    };
    let a = spread(approx);
    let f = spread(reference);
    if f == 0.0 {
        return Err(Error::Domain("reference sample collapses onto the true parameter".into()));
    }
    Ok((a / f).sqrt())
}

fn skewness(col: &[f64]) -> Result<f64> {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let m2 = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = col.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    if m2 <= 0.0 {
        return Err(Error::Domain("a component has zero variance; skewness undefined".into()));
    }
    Ok(m3 / m2.powf(1.5))
}

/// `(1/d) Σ_i |γ_i^a − γ_i^f|` with `γ` the third standardised moment.
pub fn skew_deviation(reference: &DMatrix<f64>, approx: &DMatrix<f64>) -> Result<f64> {
    check_pair(reference, approx)?;
    let d = reference.ncols();
    let mut total = 0.0;
    for k in 0..d {
        let gf = skewness(reference.column(k).as_slice())?;
        let ga = skewness(approx.column(k).as_slice())?;
        total += (ga - gf).abs();
    }
    Ok(total / d as f64)
}

/// All metrics; nearest-neighbour KL is omitted when it cannot be estimated.
pub fn discrepancy_report(
    reference: &DMatrix<f64>,
    approx: &DMatrix<f64>,
    theta_star: Option<&DVector<f64>>,
    seed: u64,
) -> Result<DiscrepancyReport> {
    let (kl_gaussian_fwd, r1) = kl_gaussian(reference, approx, Direction::Forward)?;
    let (kl_gaussian_rev, r2) = kl_gaussian(reference, approx, Direction::Reverse)?;
    Ok(DiscrepancyReport {
        mahalanobis: mahalanobis(reference, approx)?,
        kl_gaussian_fwd,
        kl_gaussian_rev,
        kl_knn_fwd: kl_knn(reference, approx, Direction::Forward).ok(),
        kl_knn_rev: kl_knn(reference, approx, Direction::Reverse).ok(),
        concentration_rho: theta_star.map(|t| concentration_ratio(reference, approx, t, seed)).transpose()?,
        skew_eta: skew_deviation(reference, approx)?,
        ridged: r1 || r2,
        wall_time_seconds: 0.0,
    })
}
