use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::Real;

/// Self-normalised importance sample.
#[derive(Debug, Clone)]
pub struct WeightedSample<T: Real> {
    pub points: DMatrix<T>,
    /// Normalised weights, summing to one.
    pub weights: Vec<f64>,
    /// `log Ẑ_N`: log of the mean unnormalised weight.
    pub log_z_hat: f64,
    /// `1 / Σ w_i²`.
    pub ess: f64,
}

/// Where the weight mass sits when normalisation fails.
#[derive(Debug, Clone, Serialize)]
pub struct OverlapDiagnostics {
    pub n_points: usize,
    pub finite_log_weights: usize,
    pub max_log_weight: f64,
    pub max_log_target: f64,
    pub max_log_proposal: f64,
}

impl<T: Real> WeightedSample<T> {
    /// Normalises unnormalised log-weights after subtracting their maximum.
    pub fn from_log_weights(points: DMatrix<T>, log_weights: &[f64]) -> Result<Self> {
        let n = points.nrows();
        if log_weights.len() != n || n == 0 {
            return Err(Error::InvalidInput(format!("{n} points but {} log-weights", log_weights.len())));
        }
        if log_weights.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
            return Err(Error::InvalidInput("log-weights contain NaN or +inf".into()));
        }
        let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::DegenerateWeights(format!("all {n} importance weights are zero")));
        }
        let mut weights: Vec<f64> = log_weights.iter().map(|w| (w - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let ess = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        Ok(Self { points, weights, log_z_hat: max + total.ln() - (n as f64).ln(), ess })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.dim());
        for (row, &w) in self.points.row_iter().zip(&self.weights) {
            for (k, v) in row.iter().enumerate() {
                m[k] += w * v.as_f64();
            }
        }
        m
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let m = self.mean();
        let d = self.dim();
        let mut c = DMatrix::zeros(d, d);
        for (row, &w) in self.points.row_iter().zip(&self.weights) {
            let u = DVector::from_fn(d, |k, _| row[k].as_f64() - m[k]);
            c += &u * u.transpose() * w;
        }
        c
    }

    /// Delta-method standard error of the self-normalised mean, per coordinate.
    pub fn mean_standard_error(&self) -> DVector<f64> {
        let m = self.mean();
        DVector::from_fn(self.dim(), |k, _| {
            self.points
                .column(k)
                .iter()
                .zip(&self.weights)
                .map(|(v, w)| (w * (v.as_f64() - m[k])).powi(2))
                .sum::<f64>()
                .sqrt()
        })
    }

    /// Expectation of `h` under the weights.
    pub fn expectation<F: Fn(&DVector<T>) -> f64>(&self, h: F) -> f64 {
        self.points.row_iter().zip(&self.weights).map(|(r, w)| w * h(&r.transpose())).sum()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=self.dim()).map(|k| format!("theta_{k}")).collect();
        header.push("weight".into());
        w.write_record(&header)?;
        for (row, weight) in self.points.row_iter().zip(&self.weights) {
            let mut rec: Vec<String> = row.iter().map(|v| format!("{}", v.as_f64())).collect();
            rec.push(format!("{weight}"));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Multinomial resampling with replacement.
pub fn resample<T: Real>(weighted: &WeightedSample<T>, n_out: usize, seed: u64) -> Result<DMatrix<T>> {
    let index = WeightedIndex::new(&weighted.weights)
        .map_err(|e| Error::DegenerateWeights(format!("cannot resample: {e}")))?;
    let mut rng = crate::rng::seeded(seed);
    let d = weighted.dim();
    let mut out = DMatrix::zeros(n_out, d);
    for i in 0..n_out {
        let j = index.sample(&mut rng);
        out.set_row(i, &weighted.points.row(j));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, 1, |i, _| i as f64)
    }

    #[test]
    fn uniform_log_weights() {
        let w = WeightedSample::from_log_weights(pts(4), &[3.0; 4]).unwrap();
        assert!(w.weights.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        assert!((w.ess - 4.0).abs() < 1e-12);
        assert!((w.log_z_hat - 3.0).abs() < 1e-12);
    }

    #[test]
    fn extreme_log_weights_stay_finite() {
        let lw = [-700.0, 700.0, 699.0, -1e300, f64::NEG_INFINITY];
        let w = WeightedSample::from_log_weights(pts(5), &lw).unwrap();
        assert!(w.weights.iter().all(|v| v.is_finite()));
        assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.ess >= 1.0 && w.ess <= 5.0);
    }

    #[test]
    fn all_zero_weights_error() {
        let lw = [f64::NEG_INFINITY; 3];
        assert!(matches!(WeightedSample::from_log_weights(pts(3), &lw), Err(Error::DegenerateWeights(_))));
        assert!(WeightedSample::from_log_weights(pts(2), &[0.0, f64::NAN]).is_err());
    }

    #[test]
    fn point_mass_resamples_to_one_point() {
        let w = WeightedSample::from_log_weights(pts(3), &[f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY]).unwrap();
        let r = resample(&w, 50, 1).unwrap();
        assert!(r.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn csv_header() {
        let w = WeightedSample::from_log_weights(pts(2), &[0.0, 0.0]).unwrap();
        let mut buf = Vec::new();
        w.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("theta_1,weight\n0,0.5\n"));
    }
}
