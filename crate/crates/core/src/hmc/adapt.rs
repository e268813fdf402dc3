use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use super::integrator::{leapfrog_from, MassMatrix, PhasePoint};
use crate::{LogDensity, Real};

/// Nesterov dual averaging of `log ε` towards a target acceptance statistic.
#[derive(Debug, Clone)]
pub struct DualAveraging {
    mu: f64,
    target: f64,
    gamma: f64,
    t0: f64,
    kappa: f64,
    count: f64,
    h_bar: f64,
    log_eps: f64,
    log_eps_bar: f64,
}

impl DualAveraging {
    pub fn new(initial_eps: f64, target_accept: f64) -> Self {
        Self {
            mu: (10.0 * initial_eps).ln(),
            target: target_accept,
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
            count: 0.0,
            h_bar: 0.0,
            log_eps: initial_eps.ln(),
            log_eps_bar: 0.0,
        }
    }

    pub fn step_size(&self) -> f64 {
        self.log_eps.exp()
    }

    /// Averaged step size, used once adaptation ends.
    pub fn final_step_size(&self) -> f64 {
        if self.count == 0.0 {
            self.step_size()
        } else {
            self.log_eps_bar.exp()
        }
    }

    pub fn update(&mut self, accept_stat: f64) {
        self.count += 1.0;
        let m = self.count;
        let w = 1.0 / (m + self.t0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_stat);
        self.log_eps = self.mu - m.sqrt() / self.gamma * self.h_bar;
        let eta = m.powf(-self.kappa);
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar;
    }
}

/// Doubles or halves `eps` until a single leapfrog step crosses acceptance ½.
pub fn find_reasonable_epsilon<T: Real, D: LogDensity<T> + ?Sized, R: Rng>(
    target: &D,
    theta: &DVector<T>,
    eps: f64,
    mass: &MassMatrix<T>,
    rng: &mut R,
) -> f64 {
    let (log_density, grad) = target.log_density_and_grad(theta);
    let z = DVector::from_fn(theta.len(), |_, _| T::of(rng.sample(StandardNormal)));
    let start = PhasePoint { theta: theta.clone(), momentum: mass.momentum_from(&z), log_density, grad };
    let h0 = start.hamiltonian(mass).as_f64();
    let log_ratio = |e: f64| {
        let (end, divergent) = leapfrog_from(target, &start, T::of(e), 1, mass);
        let d = h0 - end.hamiltonian(mass).as_f64();
        if divergent || !d.is_finite() {
            f64::NEG_INFINITY
        } else {
            d
        }
    };
    let mut eps = eps;
    let direction = if log_ratio(eps) > -(2f64.ln()) { 1.0 } else { -1.0 };
    for _ in 0..100 {
        let r = log_ratio(eps);
        if direction * r <= -direction * 2f64.ln() {
            break;
        }
        let next = eps * 2f64.powf(direction);
        if !(1e-12..=1e6).contains(&next) {
            break;
        }
        eps = next;
    }
    eps
}
