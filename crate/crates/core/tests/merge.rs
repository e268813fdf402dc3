use std::sync::Arc;

use gp_merge::gp::{fit_surrogate, FitDiagnostics, FitOptions, GpSurrogate, KernelParams, MeanParams};
use gp_merge::hmc::{postprocess, run_hmc, HmcConfig};
use gp_merge::linalg::{column_means, sample_covariance};
use gp_merge::merge::{
    consensus_merge, grad_log_expected_density, log_expected_density, student_t_proposal, MergedGp, Proposal, StudentT,
};
use gp_merge::targets::{generate_data, partition_data, Model, Subposterior};
use gp_merge::LogDensity;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn batch_surrogates(model: &Model<f64>, n: usize, c: usize, extra: Option<&DVector<f64>>) -> (Vec<Subposterior<f64>>, MergedGp<f64>) {
    let truth = match model {
        Model::RareBernoulli { .. } => DVector::from_vec(vec![0.02]),
        _ => model.default_true_theta(),
    };
    let data = Arc::new(generate_data(model, n, &truth, 31).unwrap());
    let batches = partition_data(&data, c, 7).unwrap();
    let start = model.from_natural(&truth).unwrap();
    let mut subs = Vec::new();
    let mut fitted = Vec::new();
    for (i, b) in batches.iter().enumerate() {
        let sub = Subposterior::new(model, b, c).unwrap();
        let cfg = HmcConfig { n_iter: 2000, adapt_iters: 500, seed: 100 + i as u64, adapt_mass: true, ..Default::default() };
        let chain = postprocess(&run_hmc(&sub, &cfg, &start).unwrap(), 20, true).unwrap();
        let (mut x, mut y) = (chain.draws.clone(), DVector::from_vec(chain.log_densities.clone()));
        if let Some(p) = extra {
            let rows = x.nrows();
            x = x.insert_row(rows, 0.0);
            let last = x.nrows() - 1;
            x.set_row(last, &p.transpose());
            y = y.push(sub.log_density(p));
        }
        fitted.push(fit_surrogate(&x, &y, &FitOptions { seed: i as u64, ..Default::default() }).unwrap());
        subs.push(sub);
    }
    (subs, MergedGp::new(fitted).unwrap())
}

fn quadratic_only(d: usize, amplitude: f64) -> GpSurrogate<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(d as u64);
    let x = DMatrix::from_fn(d + 3, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mean = MeanParams::uncentred(1.0, DVector::from_element(d, 0.2), -0.5, DMatrix::identity(d, d)).unwrap();
    let y = mean.eval_rows(&x);
    let kernel = KernelParams::new(amplitude, DVector::from_element(d, 1.0), amplitude * amplitude * 1e-8).unwrap();
    GpSurrogate::assemble(x, y, kernel, mean, FitDiagnostics::default()).unwrap()
}

#[test]
fn zero_variance_reduces_to_mean_sum() {
    let merged = MergedGp::new(vec![quadratic_only(2, 1e-12), quadratic_only(2, 1e-12)]).unwrap();
    let theta = DVector::from_vec(vec![0.3, -1.1]);
    let means: f64 = merged.surrogates().iter().map(|s| s.predict_mean(&theta)).sum();
    assert!((log_expected_density(&merged, &theta) - means).abs() < 1e-15);
}

#[test]
fn single_batch_matches_its_surrogate() {
    let s = quadratic_only(2, 0.5);
    let merged = MergedGp::new(vec![s.clone()]).unwrap();
    let theta = DVector::from_vec(vec![2.0, 0.4]);
    let (m, v) = s.predict(&theta);
    assert_eq!(log_expected_density(&merged, &theta), m + 0.5 * v);
}

#[test]
fn additivity_and_nonnegative_variance() {
    let (_, merged) = batch_surrogates(&Model::warped_gaussian(), 1000, 3, None);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let theta = DVector::from_fn(2, |_, _| rng.random::<f64>() * 3.0 - 1.5);
        let parts = merged.surrogates().iter().fold(0.0, |acc, s| {
            let (m, v) = s.predict(&theta);
            acc + (m + 0.5 * v)
        });
        assert_eq!(log_expected_density(&merged, &theta), parts);
        assert!(merged.moments(&theta).1 >= 0.0);
    }
}

#[test]
fn shared_training_point_recovers_true_log_posterior() {
    let model = Model::<f64>::warped_gaussian();
    let shared = DVector::from_vec(vec![0.45, 0.55]);
    let (subs, merged) = batch_surrogates(&model, 1000, 4, Some(&shared));
    let truth: f64 = subs.iter().map(|s| s.log_density(&shared)).sum();
    let (_, var) = merged.moments(&shared);
    let value = log_expected_density(&merged, &shared);
    // Noiseless conditioning with jitter δ leaves a residual of exactly −δ·α_j at training point j.
    let mut bias = 0.0;
    for (s, sub) in merged.surrogates().iter().zip(&subs) {
        let j = s.n_train() - 1;
        let err = s.predict_mean(&shared) - sub.log_density(&shared);
        let expected = -s.kernel().jitter * s.weights()[j];
        assert!((err - expected).abs() < 1e-9 * sub.log_density(&shared).abs(), "{err} vs {expected}");
        bias += expected;
        assert!(s.predict(&shared).1 <= s.kernel().jitter * 1.01);
    }
    assert!((value - (truth + bias + 0.5 * var)).abs() < 1e-9 * truth.abs(), "{value} vs {truth}");
}

#[test]
fn gradient_matches_differences_on_mixture() {
    let (_, merged) = batch_surrogates(&Model::gaussian_mixture(), 1000, 3, None);
    let centre = Model::<f64>::gaussian_mixture().default_true_theta();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = 1e-5;
    for _ in 0..20 {
        let theta = centre.map(|c| c + rng.random::<f64>() * 0.4 - 0.2);
        let g = grad_log_expected_density(&merged, &theta);
        let fd = DVector::from_fn(4, |i, _| {
            let mut up = theta.clone();
            let mut dn = theta.clone();
            up[i] += h;
            dn[i] -= h;
            (log_expected_density(&merged, &up) - log_expected_density(&merged, &dn)) / (2.0 * h)
        });
        assert!((&g - &fd).amax() / fd.amax().max(1.0) < 1e-5, "{g} vs {fd}");
    }
}

#[test]
fn gradient_vanishes_at_golden_section_mode() {
    let (_, merged) = batch_surrogates(&Model::rare_bernoulli(), 5000, 4, None);
    let f = |x: f64| merged.log_density(&DVector::from_vec(vec![x]));
    let (mut a, mut b) = (-8.0f64, 0.0f64);
    let r = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = b - r * (b - a);
        let d = a + r * (b - a);
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let mode = DVector::from_vec(vec![0.5 * (a + b)]);
    let g = grad_log_expected_density(&merged, &mode);
    assert!(g.norm() < 1e-5, "gradient {g} at {mode}");
}

fn gaussian_draws(mean: &[f64], cov: &DMatrix<f64>, n: usize, seed: u64) -> DMatrix<f64> {
    let l = cov.clone().cholesky().unwrap().l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = DMatrix::from_fn(n, mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut x = z * l.transpose();
    for mut row in x.row_iter_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v += mean[j];
        }
    }
    x
}

#[test]
fn consensus_recovers_product_of_gaussians() {
    let v1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
    let v2 = DMatrix::from_row_slice(2, 2, &[0.4, -0.1, -0.1, 2.0]);
    let (m1, m2) = (DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![-0.5, 2.0]));
    let n = 20_000;
    let s1 = gaussian_draws(m1.as_slice(), &v1, n, 1);
    let s2 = gaussian_draws(m2.as_slice(), &v2, n, 2);
    let (w1, w2) = (v1.clone().try_inverse().unwrap(), v2.clone().try_inverse().unwrap());
    let cov = (&w1 + &w2).try_inverse().unwrap();
    let analytic = &cov * (&w1 * &m1 + &w2 * &m2);
    let (out, approx) = consensus_merge(&[s1, s2]).unwrap();
    let emp = sample_covariance(&out);
    for k in 0..2 {
        let se = (emp[(k, k)] / n as f64).sqrt();
        assert!((approx.mean[k] - analytic[k]).abs() < 3.0 * se, "dim {k}: {} vs {}", approx.mean[k], analytic[k]);
    }
    assert!((&approx.covariance - &cov).amax() < 0.05 * cov.amax());
}

#[test]
fn student_t_moments_match_consensus_covariance() {
    let v = DMatrix::from_row_slice(2, 2, &[1.5, 0.4, 0.4, 0.8]);
    let (_, approx) = consensus_merge(&[gaussian_draws(&[0.5, -0.5], &v, 5000, 3)]).unwrap();
    let t = student_t_proposal(&approx, 5.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let draws = t.sample(100_000, &mut rng);
    let emp = sample_covariance(&draws);
    let scale = approx.covariance.trace() / 2.0;
    assert!((emp - &approx.covariance).amax() < 0.05 * scale);
    assert!((column_means(&draws) - &approx.mean).amax() < 0.02);
}

#[test]
fn large_dof_approaches_gaussian() {
    let cov = DMatrix::from_row_slice(2, 2, &[1.5, 0.4, 0.4, 0.8]);
    let mean = DVector::from_vec(vec![1.0, 2.0]);
    let t = StudentT::with_covariance(mean.clone(), &cov, 500.0).unwrap();
    let chol = cov.clone().cholesky().unwrap();
    let gauss_at_mean = -(2.0 * std::f64::consts::PI).ln() - 0.5 * gp_merge::linalg::log_det_from_cholesky(&chol);
    assert!((t.log_density(&mean) - gauss_at_mean).abs() < 1e-2);
}
