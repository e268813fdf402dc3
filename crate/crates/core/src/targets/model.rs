use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelName {
    WarpedGaussian,
    GaussianMixture,
    RareBernoulli,
    LogisticRegression,
    LaplaceMixture,
    GaussianMean,
}

impl ModelName {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelName::WarpedGaussian => "warped_gaussian",
            ModelName::GaussianMixture => "gaussian_mixture",
            ModelName::RareBernoulli => "rare_bernoulli",
            ModelName::LogisticRegression => "logistic_regression",
            ModelName::LaplaceMixture => "laplace_mixture",
            ModelName::GaussianMean => "gaussian_mean",
        }
    }
}

impl std::str::FromStr for ModelName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "warped_gaussian" => ModelName::WarpedGaussian,
            "gaussian_mixture" => ModelName::GaussianMixture,
            "rare_bernoulli" => ModelName::RareBernoulli,
            "logistic_regression" => ModelName::LogisticRegression,
            "laplace_mixture" => ModelName::LaplaceMixture,
            "gaussian_mean" => ModelName::GaussianMean,
            other => return Err(Error::Config(format!("unsupported model '{other}'"))),
        })
    }
}

/// A benchmark model together with its fixed constants and prior.
///
/// Priors are independent Gaussians with variance `prior_var` per scalar
/// component, except for the Bernoulli model which has a `Beta(a, b)` prior on
/// the success probability. The Bernoulli model is sampled on the logit scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", bound = "")]
pub enum Model<T: Real> {
    /// `y ~ N(θ1 + θ2², σ²)`, d = 2.
    WarpedGaussian { sigma2: T, prior_var: T },
    /// `y ~ ½N(θ_{1:2}, I₂) + ½N(θ_{3:4}, I₂)`, d = 4.
    GaussianMixture { prior_var: T },
    /// `y ~ Bern(θ)` with θ = logistic(φ), φ the sampled parameter, d = 1.
    RareBernoulli { prior_a: T, prior_b: T },
    /// Logistic regression on `dim` covariates (the design carries its own intercept column).
    LogisticRegression { dim: usize, prior_var: T },
    /// `y ~ ½Laplace(θ, β1) + ½Laplace(−θ, β2)`, d = 1.
    LaplaceMixture { beta1: T, beta2: T, prior_var: T },
    /// `y ~ N(θ, σ² I)`: conjugate model whose subposteriors are exactly Gaussian.
    GaussianMean { dim: usize, sigma2: T, prior_var: T },
}

impl<T: Real> Model<T> {
    pub fn warped_gaussian() -> Self {
        Model::WarpedGaussian { sigma2: T::one(), prior_var: T::of(0.5) }
    }

    pub fn gaussian_mixture() -> Self {
        Model::GaussianMixture { prior_var: T::of(100.0) }
    }

    pub fn rare_bernoulli() -> Self {
        Model::RareBernoulli { prior_a: T::of(2.0), prior_b: T::of(2.0) }
    }

    pub fn logistic_regression(dim: usize) -> Self {
        Model::LogisticRegression { dim, prior_var: T::of(100.0) }
    }

    pub fn laplace_mixture() -> Self {
        Model::LaplaceMixture { beta1: T::of(1.01), beta2: T::of(0.99), prior_var: T::one() }
    }

    pub fn gaussian_mean(dim: usize) -> Self {
        Model::GaussianMean { dim, sigma2: T::one(), prior_var: T::of(100.0) }
    }

    /// Benchmark model with default constants.
    pub fn by_name(name: ModelName) -> Self {
        match name {
            ModelName::WarpedGaussian => Self::warped_gaussian(),
            ModelName::GaussianMixture => Self::gaussian_mixture(),
            ModelName::RareBernoulli => Self::rare_bernoulli(),
            ModelName::LogisticRegression => Self::logistic_regression(5),
            ModelName::LaplaceMixture => Self::laplace_mixture(),
            ModelName::GaussianMean => Self::gaussian_mean(2),
        }
    }

    pub fn name(&self) -> ModelName {
        match self {
            Model::WarpedGaussian { .. } => ModelName::WarpedGaussian,
            Model::GaussianMixture { .. } => ModelName::GaussianMixture,
            Model::RareBernoulli { .. } => ModelName::RareBernoulli,
            Model::LogisticRegression { .. } => ModelName::LogisticRegression,
            Model::LaplaceMixture { .. } => ModelName::LaplaceMixture,
            Model::GaussianMean { .. } => ModelName::GaussianMean,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Model::WarpedGaussian { .. } => 2,
            Model::GaussianMixture { .. } => 4,
            Model::RareBernoulli { .. } => 1,
            Model::LogisticRegression { dim, .. } => *dim,
            Model::LaplaceMixture { .. } => 1,
            Model::GaussianMean { dim, .. } => *dim,
        }
    }

    /// Number of observation columns a compatible dataset must have.
    pub fn observation_width(&self) -> usize {
        match self {
            Model::WarpedGaussian { .. } | Model::RareBernoulli { .. } | Model::LaplaceMixture { .. } => 1,
            Model::GaussianMixture { .. } => 2,
            Model::LogisticRegression { dim, .. } => *dim,
            Model::GaussianMean { dim, .. } => *dim,
        }
    }

    pub fn needs_responses(&self) -> bool {
        matches!(self, Model::LogisticRegression { .. })
    }

    /// Checks the constants are consistent with the model.
    pub fn validate(&self) -> Result<()> {
        let pos = |v: T, what: &str| {
            if v > T::zero() && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} must be positive and finite")))
            }
        };
        match self {
            Model::WarpedGaussian { sigma2, prior_var } => {
                pos(*sigma2, "sigma2")?;
                pos(*prior_var, "prior_var")
            }
            Model::GaussianMixture { prior_var } => pos(*prior_var, "prior_var"),
            Model::RareBernoulli { prior_a, prior_b } => {
                pos(*prior_a, "prior_a")?;
                pos(*prior_b, "prior_b")
            }
            Model::LogisticRegression { dim, prior_var } => {
                if *dim == 0 {
                    return Err(Error::Config("logistic regression needs at least one covariate".into()));
                }
                pos(*prior_var, "prior_var")
            }
            Model::LaplaceMixture { beta1, beta2, prior_var } => {
                pos(*beta1, "beta1")?;
                pos(*beta2, "beta2")?;
                pos(*prior_var, "prior_var")
            }
            Model::GaussianMean { dim, sigma2, prior_var } => {
                if *dim == 0 {
                    return Err(Error::Config("gaussian_mean needs dim >= 1".into()));
                }
                pos(*sigma2, "sigma2")?;
                pos(*prior_var, "prior_var")
            }
        }
    }

    /// Maps a sampled parameter to the natural scale (logistic for Bernoulli).
    pub fn to_natural(&self, theta: &DVector<T>) -> DVector<T> {
        match self {
            Model::RareBernoulli { .. } => theta.map(logistic),
            _ => theta.clone(),
        }
    }

    pub fn from_natural(&self, theta: &DVector<T>) -> Result<DVector<T>> {
        match self {
            Model::RareBernoulli { .. } => {
                if theta.iter().any(|&p| p <= T::zero() || p >= T::one()) {
                    return Err(Error::Domain("Bernoulli probability outside (0, 1)".into()));
                }
                Ok(theta.map(|p| (p / (T::one() - p)).ln()))
            }
            _ => Ok(theta.clone()),
        }
    }

    /// Natural-scale parameter used by the default synthetic experiments.
    pub fn default_true_theta(&self) -> DVector<T> {
        let v: Vec<f64> = match self {
            Model::WarpedGaussian { .. } => vec![0.5, 0.0],
            Model::GaussianMixture { .. } => vec![0.1, 0.1, -0.1, -0.1],
            Model::RareBernoulli { .. } => vec![0.001],
            Model::LogisticRegression { dim, .. } => logistic_default_coefficients(*dim),
            Model::LaplaceMixture { .. } => vec![0.05],
            Model::GaussianMean { dim, .. } => (0..*dim).map(|i| if i % 2 == 0 { 1.0 } else { -0.5 }).collect(),
        };
        DVector::from_iterator(v.len(), v.into_iter().map(T::of))
    }
}

/// Intercept −3, a rare covariate with coefficient 2, then alternating ±0.5, 0.25, ...
fn logistic_default_coefficients(dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|j| match j {
            0 => -3.0,
            1 => 2.0,
            _ => {
                let mag = 0.5 / ((j - 1) as f64);
                if j % 2 == 0 { mag } else { -mag }
            }
        })
        .collect()
}

pub(crate) fn logistic<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `log(1 + exp(x))` without overflow.
pub(crate) fn softplus<T: Real>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Probability that a synthetic logistic-regression row carries the rare covariate.
pub const RARE_COVARIATE_RATE: f64 = 0.01;

/// Simulates `n` observations from `model` at the natural-scale parameter `true_theta`.
///
/// Logistic regression rows are `[1, rare, z_2, ..]`: an intercept column, a binary
/// covariate present in about 1% of rows, then standard-normal covariates.
pub fn generate_data<T: Real>(
    model: &Model<T>,
    n: usize,
    true_theta: &DVector<T>,
    seed: u64,
) -> Result<super::Dataset<T>> {
    model.validate()?;
    if n == 0 {
        return Err(Error::Config("n must be at least 1".into()));
    }
    if true_theta.len() != model.dim() {
        return Err(Error::Config(format!(
            "true parameter has length {}, model {} expects {}",
            true_theta.len(),
            model.name().as_str(),
            model.dim()
        )));
    }
    let mut r = rng::stream(seed, rng::tag::DATA, 0);
    let th: Vec<f64> = true_theta.iter().map(|v| v.as_f64()).collect();
    let std_normal = |r: &mut rng::SimRng| -> f64 { r.sample(StandardNormal) };
    match model {
        Model::WarpedGaussian { sigma2, .. } => {
            let sd = sigma2.as_f64().sqrt();
            let loc = th[0] + th[1] * th[1];
            let ys = (0..n).map(|_| T::of(loc + sd * std_normal(&mut r)));
            super::Dataset::new(DMatrix::from_iterator(n, 1, ys), None)
        }
        Model::GaussianMixture { .. } => {
            let mut obs = DMatrix::zeros(n, 2);
            for i in 0..n {
                let first = r.random::<f64>() < 0.5;
                let off = if first { 0 } else { 2 };
                for j in 0..2 {
                    obs[(i, j)] = T::of(th[off + j] + std_normal(&mut r));
                }
            }
            super::Dataset::new(obs, None)
        }
        Model::RareBernoulli { .. } => {
            let p = th[0];
            let bern = Bernoulli::new(p)
                .map_err(|_| Error::Domain(format!("Bernoulli probability {p} outside [0, 1]")))?;
            let ys = (0..n).map(|_| if bern.sample(&mut r) { T::one() } else { T::zero() });
            super::Dataset::new(DMatrix::from_iterator(n, 1, ys), None)
        }
        Model::LogisticRegression { dim, .. } => {
            let mut x = DMatrix::zeros(n, *dim);
            let mut y = DVector::zeros(n);
            for i in 0..n {
                let mut eta = 0.0;
                for j in 0..*dim {
                    let v = match j {
                        0 => 1.0,
                        1 => f64::from(u8::from(r.random::<f64>() < RARE_COVARIATE_RATE)),
                        _ => std_normal(&mut r),
                    };
                    x[(i, j)] = T::of(v);
                    eta += v * th[j];
                }
                let p = 1.0 / (1.0 + (-eta).exp());
                y[i] = if r.random::<f64>() < p { T::one() } else { T::zero() };
            }
            super::Dataset::new(x, Some(y))
        }
        Model::LaplaceMixture { beta1, beta2, .. } => {
            let (b1, b2) = (beta1.as_f64(), beta2.as_f64());
            let ys = (0..n).map(|_| {
                let first = r.random::<f64>() < 0.5;
                let (loc, scale) = if first { (th[0], b1) } else { (-th[0], b2) };
                let u: f64 = r.random::<f64>() - 0.5;
                T::of(loc - scale * u.signum() * (1.0 - 2.0 * u.abs()).ln())
            });
            super::Dataset::new(DMatrix::from_iterator(n, 1, ys), None)
        }
        Model::GaussianMean { dim, sigma2, .. } => {
            let sd = sigma2.as_f64().sqrt();
            let normal = Normal::new(0.0, sd).expect("positive sd");
            let mut obs = DMatrix::zeros(n, *dim);
            for i in 0..n {
                for j in 0..*dim {
                    obs[(i, j)] = T::of(th[j] + normal.sample(&mut r));
                }
            }
            super::Dataset::new(obs, None)
        }
    }
}
