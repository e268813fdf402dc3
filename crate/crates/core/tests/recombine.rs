use std::sync::Arc;

use gp_merge::density::{FnDensity, IsoGaussian};
use gp_merge::gp::{fit_hyperparams, FitDiagnostics, FitOptions, GpSurrogate, KernelParams, MeanParams};
use gp_merge::hmc::{postprocess, run_hmc, HmcConfig};
use gp_merge::linalg::{column_means, sample_covariance};
use gp_merge::merge::{MergedGp, Proposal, StudentT};
use gp_merge::recombine::{
    gp_hmc_sample, resample, run_dis, run_dis_with, run_gp_is, Functional, GpIsConfig, WeightedSample,
};
use gp_merge::targets::{generate_data, partition_data, Batch, Model, Subposterior};
use gp_merge::LogDensity;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use statrs::function::gamma::ln_gamma;

struct Bernoulli {
    model: Model<f64>,
    batches: Vec<Batch<f64>>,
    k: f64,
    n: f64,
}

fn bernoulli(n: usize, c: usize, seed: u64) -> Bernoulli {
    let model = Model::rare_bernoulli();
    let data = Arc::new(generate_data(&model, n, &DVector::from_vec(vec![0.01]), seed).unwrap());
    let k = data.observations().sum();
    let batches = partition_data(&data, c, seed).unwrap();
    Bernoulli { model, batches, k, n: n as f64 }
}

impl Bernoulli {
    fn posterior(&self) -> (f64, f64) {
        (2.0 + self.k, 2.0 + self.n - self.k)
    }

    fn analytic_mean(&self) -> f64 {
        (2.0 + self.k) / (4.0 + self.n)
    }

    /// Exact posterior draws on the logit scale with their log-density there.
    fn exact_draws(&self, count: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
        let (a, b) = self.posterior();
        let beta = Beta::new(a, b).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ps: Vec<f64> = (0..count).map(|_| beta.sample(&mut rng)).collect();
        let ln_b = ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
        let log_q = ps.iter().map(|p| a * p.ln() + b * (1.0 - p).ln() - ln_b).collect();
        (DMatrix::from_iterator(count, 1, ps.iter().map(|p| (p / (1.0 - p)).ln())), log_q)
    }

    fn t_proposal(&self) -> StudentT<f64> {
        let (a, b) = self.posterior();
        let loc = (a / b).ln();
        let sd = (1.0 / a + 1.0 / b).sqrt();
        StudentT::with_covariance(DVector::from_vec(vec![loc]), &DMatrix::from_element(1, 1, 1.5 * sd * sd), 5.0).unwrap()
    }
}

fn weighted_mean_and_se(w: &WeightedSample<f64>, h: impl Fn(f64) -> f64) -> (f64, f64) {
    let vals: Vec<f64> = w.points.column(0).iter().map(|&x| h(x)).collect();
    let mean: f64 = vals.iter().zip(&w.weights).map(|(v, w)| v * w).sum();
    let var: f64 = vals.iter().zip(&w.weights).map(|(v, w)| w * w * (v - mean).powi(2)).sum();
    (mean, var.sqrt())
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn dis_with_exact_proposal_has_uniform_weights() {
    let b = bernoulli(10_000, 10, 3);
    let (points, log_q) = b.exact_draws(2000, 4);
    let w = run_dis(&points, &log_q, &b.model, &b.batches).unwrap();
    for &v in &w.weights {
        assert!((v * 2000.0 - 1.0).abs() < 1e-9, "{v}");
    }
    assert!((w.ess - 2000.0).abs() < 1e-6);
}

#[test]
fn dis_recovers_bernoulli_mean() {
    let b = bernoulli(10_000, 10, 5);
    let q = b.t_proposal();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let points = q.sample(5000, &mut rng);
    let log_q: Vec<f64> = points.row_iter().map(|r| q.log_density(&r.transpose())).collect();
    let w = run_dis(&points, &log_q, &b.model, &b.batches).unwrap();
    let (est, se) = weighted_mean_and_se(&w, logistic);
    assert!((est - b.analytic_mean()).abs() < 3.0 * se, "{est} vs {} (se {se})", b.analytic_mean());
    assert!(w.ess > 1000.0);
}

#[test]
fn dis_weights_ignore_constant_shifts() {
    let b = bernoulli(2000, 4, 6);
    let subs: Vec<_> = b.batches.iter().map(|bt| Subposterior::new(&b.model, bt, 4).unwrap()).collect();
    let shifted: Vec<_> = subs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            FnDensity::new(1, move |x: &DVector<f64>| {
                let (v, g) = s.log_density_and_grad(x);
                (v + 123.0 * (i as f64 + 1.0), g)
            })
        })
        .collect();
    let (points, log_q) = b.exact_draws(300, 1);
    let a = run_dis_with(&points, &log_q, &subs).unwrap();
    let c = run_dis_with(&points, &log_q, &shifted).unwrap();
    for (x, y) in a.weights.iter().zip(&c.weights) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn dis_reports_disjoint_proposal() {
    let outside = FnDensity::new(1, |x: &DVector<f64>| (f64::NEG_INFINITY, x.clone()));
    let points = DMatrix::from_element(3, 1, 0.5);
    let err = run_dis_with(&points, &[0.0; 3], &[outside]).unwrap_err();
    assert!(err.to_string().contains("overlap"), "{err}");
}

#[test]
fn is_error_shrinks_with_more_points() {
    let b = bernoulli(10_000, 10, 8);
    let q = b.t_proposal();
    let sizes = [100, 1000, 10_000];
    let mut err = [0.0; 3];
    for seed in 0..20 {
        for (slot, &n) in err.iter_mut().zip(&sizes) {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let points = q.sample(n, &mut rng);
            let log_q: Vec<f64> = points.row_iter().map(|r| q.log_density(&r.transpose())).collect();
            let w = run_dis(&points, &log_q, &b.model, &b.batches).unwrap();
            *slot += (weighted_mean_and_se(&w, logistic).0 - b.analytic_mean()).abs() / 20.0;
        }
    }
    let drops = err.windows(2).filter(|p| p[1] < p[0]).count();
    assert!(drops >= 2, "{err:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn stabilised_weights_are_finite(lw in prop::collection::vec(-700.0f64..700.0, 1..200)) {
        let n = lw.len();
        let w = WeightedSample::from_log_weights(DMatrix::<f64>::zeros(n, 1), &lw).unwrap();
        prop_assert!(w.weights.iter().all(|v| v.is_finite() && *v >= 0.0));
        prop_assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.ess >= 1.0 - 1e-12 && w.ess <= n as f64 + 1e-9);
        prop_assert!(w.log_z_hat.is_finite());
    }
}

fn quadratic_surrogate(amplitude: f64) -> GpSurrogate<f64> {
    let x = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0, -1.0, -1.0]);
    let mean = MeanParams::uncentred(0.0, DVector::from_vec(vec![0.2, -0.3]), -0.5, DMatrix::identity(2, 2)).unwrap();
    let y = mean.eval_rows(&x);
    let kernel = KernelParams::new(amplitude, DVector::from_element(2, 1.0), amplitude * amplitude * 1e-8).unwrap();
    GpSurrogate::assemble(x, y, kernel, mean, FitDiagnostics::default()).unwrap()
}

#[test]
fn gp_hmc_on_quadratic_surrogate_is_gaussian() {
    let merged = MergedGp::new(vec![quadratic_surrogate(1e-9)]).unwrap();
    let cfg = HmcConfig { n_iter: 20_000, adapt_iters: 1000, seed: 3, ..Default::default() };
    let chain = gp_hmc_sample(&merged, &cfg, None).unwrap();
    let draws = chain.sampling_draws();
    let m = column_means(&draws);
    let v = sample_covariance(&draws);
    assert!((m[0] - 0.2).abs() < 0.04 && (m[1] + 0.3).abs() < 0.04, "{m}");
    for i in 0..2 {
        assert!((v[(i, i)] - 1.0).abs() < 0.08, "{v}");
    }
}

#[test]
fn gp_hmc_on_standard_normal_surrogate() {
    let target = IsoGaussian { mean: DVector::from_vec(vec![0.0]), sd: 1.0 };
    let cfg = HmcConfig { n_iter: 2000, adapt_iters: 500, seed: 12, ..Default::default() };
    let chain = postprocess(&run_hmc(&target, &cfg, &DVector::from_vec(vec![0.0])).unwrap(), 20, true).unwrap();
    let merged = MergedGp::new(vec![fit_hyperparams(&chain, &FitOptions::default()).unwrap()]).unwrap();
    let cfg = HmcConfig { n_iter: 20_000, adapt_iters: 1000, seed: 13, ..Default::default() };
    let draws = gp_hmc_sample(&merged, &cfg, None).unwrap().sampling_draws();
    let m: f64 = column_means(&draws)[0];
    assert!(m.abs() < 0.05, "{m}");
}

fn gaussian_proposal() -> StudentT<f64> {
    StudentT::with_covariance(DVector::from_vec(vec![0.2, -0.3]), &DMatrix::identity(2, 2), 5.0).unwrap()
}

#[test]
fn gp_is_single_realisation_is_self_normalised_is() {
    let merged = MergedGp::new(vec![quadratic_surrogate(0.3)]).unwrap();
    let cfg = GpIsConfig { n_points: 400, m_realisations: 1, seed: 2, ..Default::default() };
    let res = run_gp_is(&merged, &gaussian_proposal(), &cfg, &[Functional::mean(0)]).unwrap();
    let s = &res.summary[0];
    assert!((s.estimate - res.per_realisation_estimates[0][0]).abs() < 1e-12);
    assert_eq!(s.q025, s.q975);
    assert!((res.weighted.log_z_hat - res.log_z[0]).abs() < 1e-12);
}

#[test]
fn gp_is_without_variance_is_deterministic_is() {
    let merged = MergedGp::new(vec![quadratic_surrogate(1e-12)]).unwrap();
    let q = gaussian_proposal();
    let cfg = GpIsConfig { n_points: 500, m_realisations: 20, seed: 4, ..Default::default() };
    let res = run_gp_is(&merged, &q, &cfg, &[Functional::mean(0), Functional::second_moment(1)]).unwrap();
    let pts = &res.weighted.points;
    let lw: Vec<f64> = pts
        .row_iter()
        .map(|r| {
            let x = r.transpose();
            merged.surrogates()[0].predict_mean(&x) - q.log_density(&x)
        })
        .collect();
    let exact = WeightedSample::from_log_weights(pts.clone(), &lw).unwrap();
    let h0 = exact.expectation(|x| x[0]);
    let h1 = exact.expectation(|x| x[1] * x[1]);
    for (s, h) in res.summary.iter().zip([h0, h1]) {
        assert!(s.q975 - s.q025 < 1e-9, "{s:?}");
        assert!((s.estimate - h).abs() < 1e-9 && (s.median - h).abs() < 1e-9, "{s:?} vs {h}");
    }
}

#[test]
fn gp_is_quantiles_bracket_median() {
    let merged = MergedGp::new(vec![quadratic_surrogate(0.5), quadratic_surrogate(0.2)]).unwrap();
    let cfg = GpIsConfig { n_points: 300, m_realisations: 50, seed: 8, ..Default::default() };
    let res = run_gp_is(&merged, &gaussian_proposal(), &cfg, &[Functional::mean(0), Functional::mean(1)]).unwrap();
    assert_eq!(res.per_realisation_estimates[0].len(), 50);
    for s in &res.summary {
        assert!(s.q025 <= s.median && s.median <= s.q975, "{s:?}");
    }
    let json: serde_json::Value = serde_json::from_str(&res.summary_json().unwrap()).unwrap();
    assert_eq!(json[0]["name"], "E[theta_1]");
}

#[test]
fn uniform_resample_frequencies() {
    let n = 10;
    let w = WeightedSample::from_log_weights(DMatrix::from_fn(n, 1, |i, _| i as f64), &[0.0; 10]).unwrap();
    let out = resample(&w, 100_000, 3).unwrap();
    let expected = 10_000.0;
    let sd = (100_000.0 * 0.1 * 0.9f64).sqrt();
    for i in 0..n {
        let count = out.iter().filter(|&&v| v == i as f64).count() as f64;
        assert!((count - expected).abs() < 4.0 * sd, "point {i}: {count}");
    }
    assert_eq!(resample(&w, 500, 9).unwrap(), resample(&w, 500, 9).unwrap());
}

#[test]
fn resample_preserves_weighted_mean() {
    let pts = DMatrix::from_fn(50, 1, |i, _| (i as f64 * 0.37).sin() * 3.0);
    let lw: Vec<f64> = (0..50).map(|i| (i as f64 * 0.11).cos()).collect();
    let w = WeightedSample::from_log_weights(pts, &lw).unwrap();
    let target = w.mean()[0];
    let var = w.covariance()[(0, 0)];
    let n_out = 200_000;
    let out = resample(&w, n_out, 5).unwrap();
    let m = out.mean();
    assert!((m - target).abs() < 3.0 * (var / n_out as f64).sqrt(), "{m} vs {target}");
}
