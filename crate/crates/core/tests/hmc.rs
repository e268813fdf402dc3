use std::sync::Arc;

use gp_merge::density::{FnDensity, IsoGaussian};
use gp_merge::hmc::{leapfrog, mcse_mean, postprocess, run_hmc, HmcConfig, MassMatrix};
use gp_merge::targets::{generate_data, Model, Subposterior};
use gp_merge::LogDensity;
use nalgebra::{DMatrix, DVector};

fn std_normal() -> IsoGaussian<f64> {
    IsoGaussian { mean: DVector::zeros(1), sd: 1.0 }
}

/// Scalar leapfrog for `-∇ log π(θ) = θ`, written out step by step.
fn scalar_leapfrog(mut theta: f64, mut phi: f64, eps: f64, steps: usize) -> (f64, f64) {
    for _ in 0..steps {
        phi -= 0.5 * eps * theta;
        theta += eps * phi;
        phi -= 0.5 * eps * theta;
    }
    (theta, phi)
}

#[test]
fn one_step_matches_scalar_reference() {
    let (t, p) = leapfrog(&std_normal(), &DVector::from_vec(vec![0.0]), &DVector::from_vec(vec![1.0]), 0.1, 1, &MassMatrix::identity(1))
        .unwrap();
    let (rt, rp) = scalar_leapfrog(0.0, 1.0, 0.1, 1);
    assert!((t[0] - 0.1).abs() < 1e-15);
    assert!((t[0] - rt).abs() < 1e-15 && (p[0] - rp).abs() < 1e-15);
    assert!((p[0] - 0.995).abs() < 1e-15);
    let (t, p) = leapfrog(&std_normal(), &DVector::from_vec(vec![0.3]), &DVector::from_vec(vec![-0.7]), 0.05, 40, &MassMatrix::identity(1))
        .unwrap();
    let (rt, rp) = scalar_leapfrog(0.3, -0.7, 0.05, 40);
    assert!((t[0] - rt).abs() < 1e-13 && (p[0] - rp).abs() < 1e-13);
}

#[test]
fn trajectory_is_reversible() {
    let model = Model::<f64>::warped_gaussian();
    let data = Arc::new(generate_data(&model, 200, &model.default_true_theta(), 3).unwrap());
    let target = Subposterior::full(&model, &data).unwrap();
    let mass = MassMatrix::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.4, 0.4, 1.0])).unwrap();
    let theta = DVector::from_vec(vec![0.4, 0.6]);
    let phi = DVector::from_vec(vec![0.8, -1.1]);
    let (t1, p1) = leapfrog(&target, &theta, &phi, 0.01, 30, &mass).unwrap();
    let (t0, p0) = leapfrog(&target, &t1, &(-p1), 0.01, 30, &mass).unwrap();
    assert!((t0 - &theta).amax() < 1e-10);
    assert!((p0 + &phi).amax() < 1e-10);
}

#[test]
fn energy_is_conserved_for_small_steps() {
    let target = IsoGaussian { mean: DVector::from_vec(vec![1.0, -2.0, 0.5]), sd: 0.7 };
    let mass = MassMatrix::identity(3);
    let theta = DVector::from_vec(vec![0.2, -1.0, 1.5]);
    let phi = DVector::from_vec(vec![1.0, 0.3, -0.6]);
    let h = |t: &DVector<f64>, p: &DVector<f64>| mass.kinetic(p) - target.log_density(t);
    let (t1, p1) = leapfrog(&target, &theta, &phi, 1e-3, 20, &mass).unwrap();
    assert!((h(&t1, &p1) - h(&theta, &phi)).abs() < 1e-4);
}

#[test]
fn standard_normal_moments() {
    let cfg = HmcConfig { n_iter: 5000, adapt_iters: 1000, seed: 11, ..Default::default() };
    let chain = run_hmc(&std_normal(), &cfg, &DVector::from_vec(vec![0.5])).unwrap();
    let x: Vec<f64> = chain.sampling_draws().column(0).iter().copied().collect();
    assert_eq!(x.len(), 5000);
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (x.len() - 1) as f64;
    assert!(mean.abs() < 3.0 * mcse_mean(&x), "mean {mean}, mcse {}", mcse_mean(&x));
    assert!((0.9..=1.1).contains(&var), "var {var}");
}

#[test]
fn dual_averaging_hits_acceptance_band() {
    let target = IsoGaussian { mean: DVector::zeros(5), sd: 1.0 };
    let cfg = HmcConfig { n_iter: 2000, adapt_iters: 1000, seed: 2, ..Default::default() };
    let chain = run_hmc(&target, &cfg, &DVector::zeros(5)).unwrap();
    let rate = chain.acceptance_rate();
    assert!((0.55..=0.95).contains(&rate), "acceptance {rate}");
}

#[test]
fn tiny_steps_are_always_accepted() {
    let target = IsoGaussian { mean: DVector::zeros(3), sd: 1.0 };
    let cfg = HmcConfig { n_iter: 1000, adapt_iters: 0, leapfrog_steps: 1, step_size: 1e-6, step_jitter: 0.0, seed: 9, ..Default::default() };
    let chain = run_hmc(&target, &cfg, &DVector::zeros(3)).unwrap();
    assert_eq!(chain.acceptance_rate(), 1.0);
}

fn logistic_cdf(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn kolmogorov_smirnov_on_logistic_target() {
    let target = FnDensity::new(1, |t: &DVector<f64>| {
        let x = t[0];
        let v = -x - 2.0 * (-x).exp().ln_1p();
        (v, DVector::from_element(1, 1.0 - 2.0 * logistic_cdf(x)))
    });
    let cfg = HmcConfig { n_iter: 50_000, adapt_iters: 1000, seed: 21, ..Default::default() };
    let chain = run_hmc(&target, &cfg, &DVector::zeros(1)).unwrap();
    let mut x: Vec<f64> = chain.sampling_draws().column(0).iter().copied().collect();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let ks = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = logistic_cdf(v);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    assert!(ks < 0.02, "KS statistic {ks}");
}

#[test]
fn cached_log_densities_match_fresh_evaluation() {
    let model = Model::<f64>::logistic_regression(5);
    let data = Arc::new(generate_data(&model, 500, &model.default_true_theta(), 5).unwrap());
    let target = Subposterior::full(&model, &data).unwrap();
    let cfg = HmcConfig { n_iter: 400, adapt_iters: 200, seed: 1, adapt_mass: true, ..Default::default() };
    let chain = run_hmc(&target, &cfg, &DVector::zeros(5)).unwrap();
    let kept = postprocess(&chain, 4, true).unwrap();
    for (i, row) in kept.draws.row_iter().enumerate() {
        let fresh = target.log_density(&row.transpose());
        assert_eq!(fresh.to_bits(), kept.log_densities[i].to_bits());
    }
}

#[test]
fn thinning_a_real_chain() {
    let cfg = HmcConfig { n_iter: 2000, adapt_iters: 200, seed: 4, ..Default::default() };
    let chain = run_hmc(&std_normal(), &cfg, &DVector::zeros(1)).unwrap();
    let kept = postprocess(&chain, 20, false).unwrap();
    assert_eq!(kept.len(), 100);
    assert_eq!(kept.iterations[0], 200 + 19);
}

#[test]
fn single_precision_chain_runs() {
    let target = IsoGaussian::<f32> { mean: DVector::zeros(2), sd: 1.0 };
    let cfg = HmcConfig::<f32> { n_iter: 500, adapt_iters: 200, seed: 3, ..Default::default() };
    let chain = run_hmc(&target, &cfg, &DVector::zeros(2)).unwrap();
    assert!(chain.acceptance_rate() > 0.5);
}
