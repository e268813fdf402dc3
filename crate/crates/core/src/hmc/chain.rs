use std::collections::HashSet;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Real;

/// Draws and cached log-densities from one chain. The first `warmup` rows are adaptation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ChainRecord<T: Real> {
    pub draws: DMatrix<T>,
    pub log_densities: Vec<T>,
    pub accept_flags: Vec<bool>,
    pub divergent_flags: Vec<bool>,
    /// Original iteration index of each row.
    pub iterations: Vec<usize>,
    pub tuned_step_size: T,
    pub warmup: usize,
    #[serde(default)]
    pub mass_inverse: Option<DMatrix<T>>,
}

/// Row-major accumulator used while a chain runs.
pub(crate) struct ChainBuilder<T: Real> {
    dim: usize,
    warmup: usize,
    values: Vec<T>,
    log_densities: Vec<T>,
    accept_flags: Vec<bool>,
    divergent_flags: Vec<bool>,
}

impl<T: Real> ChainBuilder<T> {
    pub(crate) fn new(capacity: usize, dim: usize, warmup: usize) -> Self {
        Self {
            dim,
            warmup,
            values: Vec::with_capacity(capacity * dim),
            log_densities: Vec::with_capacity(capacity),
            accept_flags: Vec::with_capacity(capacity),
            divergent_flags: Vec::with_capacity(capacity),
        }
    }

    pub(crate) fn push(&mut self, theta: &DVector<T>, log_density: T, accepted: bool, divergent: bool) {
        self.values.extend(theta.iter().copied());
        self.log_densities.push(log_density);
        self.accept_flags.push(accepted);
        self.divergent_flags.push(divergent);
    }

    pub(crate) fn finish(self, tuned_step_size: T, mass_inverse: Option<DMatrix<T>>) -> ChainRecord<T> {
        let n = self.log_densities.len();
        ChainRecord {
            draws: DMatrix::from_row_slice(n, self.dim, &self.values),
            log_densities: self.log_densities,
            accept_flags: self.accept_flags,
            divergent_flags: self.divergent_flags,
            iterations: (0..n).collect(),
            tuned_step_size,
            warmup: self.warmup,
            mass_inverse,
        }
    }
}

impl<T: Real> ChainRecord<T> {
    /// Builds a record from explicit rows, with no adaptation prefix.
    pub fn from_parts(draws: DMatrix<T>, log_densities: Vec<T>, accept_flags: Vec<bool>) -> Result<Self> {
        let n = draws.nrows();
        if log_densities.len() != n || accept_flags.len() != n {
            return Err(Error::InvalidInput(format!(
                "chain has {n} draws, {} log-densities and {} accept flags",
                log_densities.len(),
                accept_flags.len()
            )));
        }
        Ok(Self {
            draws,
            log_densities,
            accept_flags,
            divergent_flags: vec![false; n],
            iterations: (0..n).collect(),
            tuned_step_size: T::zero(),
            warmup: 0,
            mass_inverse: None,
        })
    }

    pub fn len(&self) -> usize {
        self.log_densities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_densities.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.draws.ncols()
    }

    /// Post-adaptation draws.
    pub fn sampling_draws(&self) -> DMatrix<T> {
        self.draws.rows(self.warmup, self.len() - self.warmup).into_owned()
    }

    pub fn acceptance_rate(&self) -> f64 {
        let kept = &self.accept_flags[self.warmup..];
        if kept.is_empty() {
            return 0.0;
        }
        kept.iter().filter(|&&a| a).count() as f64 / kept.len() as f64
    }

    pub fn divergences(&self) -> usize {
        self.divergent_flags[self.warmup..].iter().filter(|&&d| d).count()
    }

    fn select(&self, rows: &[usize]) -> Self {
        let d = self.dim();
        Self {
            draws: DMatrix::from_fn(rows.len(), d, |i, j| self.draws[(rows[i], j)]),
            log_densities: rows.iter().map(|&r| self.log_densities[r]).collect(),
            accept_flags: rows.iter().map(|&r| self.accept_flags[r]).collect(),
            divergent_flags: rows.iter().map(|&r| self.divergent_flags[r]).collect(),
            iterations: rows.iter().map(|&r| self.iterations[r]).collect(),
            tuned_step_size: self.tuned_step_size,
            warmup: 0,
            mass_inverse: self.mass_inverse.clone(),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["iter".to_string()];
        header.extend((1..=self.dim()).map(|k| format!("theta_{k}")));
        header.push("log_density".into());
        header.push("accepted".into());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![self.iterations[i].to_string()];
            row.extend(self.draws.row(i).iter().map(|v| format!("{}", v.as_f64())));
            row.push(format!("{}", self.log_densities[i].as_f64()));
            row.push(if self.accept_flags[i] { "1" } else { "0" }.into());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Drops adaptation, keeps every `thin`-th draw and optionally removes exact repeats.
pub fn postprocess<T: Real>(chain: &ChainRecord<T>, thin: usize, drop_duplicates: bool) -> Result<ChainRecord<T>> {
    if thin == 0 {
        return Err(Error::Config("thin must be at least 1".into()));
    }
    let mut seen = HashSet::new();
    let rows: Vec<usize> = (chain.warmup..chain.len())
        .filter(|i| (i - chain.warmup + 1) % thin == 0)
        .filter(|&i| {
            !drop_duplicates || seen.insert(chain.draws.row(i).iter().map(|v| v.as_f64().to_bits()).collect::<Vec<_>>())
        })
        .collect();
    if rows.is_empty() {
        return Err(Error::EmptyChain { draws: chain.len() - chain.warmup, thin });
    }
    Ok(chain.select(&rows))
}

/// Effective sample size of one series using Geyer's initial positive sequence.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let var = c.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if var == 0.0 {
        return n as f64;
    }
    let acf = |lag: usize| c[..n - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / (n as f64 * var);
    let mut sum = 0.0;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = if k == 0 { 1.0 + acf(1) } else { acf(2 * k) + acf(2 * k + 1) };
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        k += 1;
    }
    let tau = (2.0 * sum - 1.0).max(1.0 / n as f64);
    n as f64 / tau
}

/// Monte-Carlo standard error of the mean of one series.
pub fn mcse_mean(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (var / effective_sample_size(x)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain_of(values: &[f64]) -> ChainRecord<f64> {
        let n = values.len();
        ChainRecord::from_parts(DMatrix::from_column_slice(n, 1, values), values.iter().map(|v| -v * v).collect(), vec![true; n])
            .unwrap()
    }

    #[test]
    fn identity_without_thinning_or_duplicates() {
        let c = chain_of(&[1.0, 2.0, 3.0]);
        let p = postprocess(&c, 1, true).unwrap();
        assert_eq!(p.draws, c.draws);
        assert_eq!(p.log_densities, c.log_densities);
    }

    #[test]
    fn thinning_keeps_every_kth() {
        let values: Vec<f64> = (0..2000).map(|i| i as f64).collect();
        let p = postprocess(&chain_of(&values), 20, true).unwrap();
        assert_eq!(p.len(), 100);
        assert_eq!(p.draws[(0, 0)], 19.0);
        assert_eq!(p.log_densities[0], -361.0);
    }

    #[test]
    fn repeated_rows_are_dropped() {
        let c = chain_of(&[0.1, 0.5, 0.5, 0.5, 0.9]);
        let p = postprocess(&c, 1, true).unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(postprocess(&c, 1, false).unwrap().len(), 5);
    }

    #[test]
    fn warmup_is_discarded() {
        let mut c = chain_of(&[5.0, 6.0, 7.0, 8.0]);
        c.warmup = 2;
        let p = postprocess(&c, 1, true).unwrap();
        assert_eq!(p.draws.as_slice(), &[7.0, 8.0]);
        assert_eq!(p.iterations, vec![2, 3]);
    }

    #[test]
    fn empty_result_is_an_error() {
        let c = chain_of(&[1.0, 2.0]);
        assert!(matches!(postprocess(&c, 5, true), Err(Error::EmptyChain { .. })));
        assert!(matches!(postprocess(&c, 0, true), Err(Error::Config(_))));
    }

    #[test]
    fn csv_layout() {
        let c = chain_of(&[1.5, 2.5]);
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "iter,theta_1,log_density,accepted");
        assert_eq!(text.lines().nth(1).unwrap(), "0,1.5,-2.25,1");
    }

    #[test]
    fn ess_of_independent_series_is_near_n() {
        use rand::Rng;
        let mut rng = crate::rng::seeded(1);
        let x: Vec<f64> = (0..4000).map(|_| rng.random::<f64>()).collect();
        let ess = effective_sample_size(&x);
        assert!(ess > 3000.0 && ess < 5000.0, "{ess}");
        let sticky: Vec<f64> = x.iter().flat_map(|&v| [v; 10]).collect();
        let ess_sticky = effective_sample_size(&sticky);
        assert!(ess_sticky > 3000.0 && ess_sticky < 5500.0, "{ess_sticky}");
    }
}
