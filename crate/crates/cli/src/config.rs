use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use gp_merge::gp::{Factorization, FitOptions};
use gp_merge::hmc::HmcConfig;
use gp_merge::targets::{Model, ModelName};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::emit::DEFAULT_COLUMNS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Consensus,
    GpHmc,
    Dis,
    GpIs,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::Consensus, Algorithm::GpHmc, Algorithm::Dis, Algorithm::GpIs];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Consensus => "consensus",
            Algorithm::GpHmc => "gp_hmc",
            Algorithm::Dis => "dis",
            Algorithm::GpIs => "gp_is",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .with_context(|| format!("unknown algorithm '{s}' (expected one of consensus, gp_hmc, dis, gp_is)"))
    }
}

/// Model name plus optional overrides of its constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: ModelName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_var: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
    /// Natural-scale parameter used to simulate data; also the `θ*` of the concentration ratio.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_theta: Option<Vec<f64>>,
}

impl ModelSpec {
    pub fn build(&self) -> Result<Model<f64>> {
        let mut model = Model::by_name(self.name);
        let mut unused = Vec::new();
        let mut set = |slot: Option<&mut f64>, value: Option<f64>, key: &'static str| match (slot, value) {
            (Some(s), Some(v)) => *s = v,
            (None, Some(_)) => unused.push(key),
            _ => {}
        };
        match &mut model {
            Model::WarpedGaussian { sigma2, prior_var } => {
                set(Some(sigma2), self.sigma2, "sigma2");
                set(Some(prior_var), self.prior_var, "prior_var");
                set(None, self.prior_a, "prior_a");
                set(None, self.prior_b, "prior_b");
                set(None, self.beta1, "beta1");
                set(None, self.beta2, "beta2");
            }
            Model::GaussianMixture { prior_var } => {
                set(Some(prior_var), self.prior_var, "prior_var");
                set(None, self.sigma2, "sigma2");
                set(None, self.prior_a, "prior_a");
                set(None, self.prior_b, "prior_b");
                set(None, self.beta1, "beta1");
                set(None, self.beta2, "beta2");
            }
            Model::RareBernoulli { prior_a, prior_b } => {
                set(Some(prior_a), self.prior_a, "prior_a");
                set(Some(prior_b), self.prior_b, "prior_b");
                set(None, self.sigma2, "sigma2");
                set(None, self.prior_var, "prior_var");
                set(None, self.beta1, "beta1");
                set(None, self.beta2, "beta2");
            }
            Model::LogisticRegression { dim, prior_var } => {
                if let Some(d) = self.dim {
                    *dim = d;
                }
                set(Some(prior_var), self.prior_var, "prior_var");
                set(None, self.sigma2, "sigma2");
                set(None, self.prior_a, "prior_a");
                set(None, self.prior_b, "prior_b");
                set(None, self.beta1, "beta1");
                set(None, self.beta2, "beta2");
            }
            Model::LaplaceMixture { beta1, beta2, prior_var } => {
                set(Some(beta1), self.beta1, "beta1");
                set(Some(beta2), self.beta2, "beta2");
                set(Some(prior_var), self.prior_var, "prior_var");
                set(None, self.sigma2, "sigma2");
                set(None, self.prior_a, "prior_a");
                set(None, self.prior_b, "prior_b");
            }
            Model::GaussianMean { dim, sigma2, prior_var } => {
                if let Some(d) = self.dim {
                    *dim = d;
                }
                set(Some(sigma2), self.sigma2, "sigma2");
                set(Some(prior_var), self.prior_var, "prior_var");
                set(None, self.prior_a, "prior_a");
                set(None, self.prior_b, "prior_b");
                set(None, self.beta1, "beta1");
                set(None, self.beta2, "beta2");
            }
        }
        if !unused.is_empty() {
            bail!("model {} does not take {}", self.name.as_str(), unused.join(", "));
        }
        if self.dim.is_some() && !matches!(model, Model::LogisticRegression { .. } | Model::GaussianMean { .. }) {
            bail!("model {} has a fixed dimension", self.name.as_str());
        }
        model.validate()?;
        Ok(model)
    }

    pub fn true_theta(&self, model: &Model<f64>) -> Result<DVector<f64>> {
        match &self.true_theta {
            None => Ok(model.default_true_theta()),
            Some(v) if v.len() == model.dim() => Ok(DVector::from_vec(v.clone())),
            Some(v) => bail!("true_theta has {} entries, model {} has dimension {}", v.len(), self.name.as_str(), model.dim()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    /// Observation columns; for logistic regression these are the covariates.
    pub columns: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    /// Synthetic sample size; ignored for CSV input.
    #[serde(default = "default_n")]
    pub n: usize,
    /// Fixed across repetitions: only the split changes between them.
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<CsvSource>,
}

fn default_n() -> usize {
    10_000
}

/// HMC tuning shared by batch chains, GP-HMC and the reference run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HmcSettings {
    pub n_iter: usize,
    pub adapt_iters: usize,
    pub leapfrog_steps: usize,
    pub step_size: f64,
    pub target_accept: f64,
    pub adapt_mass: bool,
    pub step_jitter: f64,
}

impl Default for HmcSettings {
    fn default() -> Self {
        Self {
            n_iter: 2000,
            adapt_iters: 500,
            leapfrog_steps: 20,
            step_size: 0.1,
            target_accept: 0.65,
            adapt_mass: true,
            step_jitter: 0.1,
        }
    }
}

impl HmcSettings {
    pub fn to_config(&self, n_iter: usize, seed: u64) -> HmcConfig<f64> {
        HmcConfig {
            n_iter,
            leapfrog_steps: self.leapfrog_steps,
            step_size: self.step_size,
            mass_matrix: None,
            adapt_iters: self.adapt_iters,
            target_accept: self.target_accept,
            seed,
            adapt_mass: self.adapt_mass,
            step_jitter: self.step_jitter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchSpec {
    /// Number of batches C.
    pub count: usize,
    /// Keep every `thin`-th post-adaptation draw for GP training, so J = n_iter / thin.
    #[serde(default = "default_thin")]
    pub thin: usize,
    #[serde(default)]
    pub hmc: HmcSettings,
}

fn default_thin() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpSpec {
    pub restarts: usize,
    pub max_iter: usize,
    pub jitter: f64,
    pub max_jitter: f64,
    pub max_amplitude: f64,
}

impl Default for GpSpec {
    fn default() -> Self {
        let f = FitOptions::default();
        Self { restarts: f.restarts, max_iter: f.max_iter, jitter: f.jitter, max_jitter: f.max_jitter, max_amplitude: f.max_amplitude }
    }
}

impl GpSpec {
    pub fn options(&self, seed: u64) -> FitOptions {
        FitOptions {
            restarts: self.restarts,
            max_iter: self.max_iter,
            jitter: self.jitter,
            max_jitter: self.max_jitter,
            max_amplitude: self.max_amplitude,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSpec {
    /// Draws per algorithm, N.
    #[serde(default = "default_draws")]
    pub n_draws: usize,
    /// GP-HMC tuning; `n_iter` is replaced by `n_draws`.
    #[serde(default)]
    pub hmc: HmcSettings,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        Self { n_draws: default_draws(), hmc: HmcSettings { adapt_iters: 1000, ..HmcSettings::default() } }
    }
}

fn default_draws() -> usize {
    5000
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalSource {
    /// Student-t with the consensus mean and covariance.
    Consensus,
    /// Student-t moment-matched to the GP-HMC draws.
    GpHmc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImportanceSpec {
    pub m_realisations: usize,
    pub proposal: ProposalSource,
    pub dof: f64,
    pub factorization: Factorization,
}

impl Default for ImportanceSpec {
    fn default() -> Self {
        Self { m_realisations: 500, proposal: ProposalSource::Consensus, dof: 5.0, factorization: Factorization::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    /// Analytic when the model is conjugate, a grid for one-dimensional models, HMC otherwise.
    Auto,
    Analytic,
    Grid,
    Hmc,
    /// Skip metrics.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceSpec {
    pub kind: ReferenceKind,
    /// Full-data HMC settings; the chain is thinned to N draws.
    pub hmc: HmcSettings,
    pub grid_points: usize,
}

impl Default for ReferenceSpec {
    fn default() -> Self {
        Self {
            kind: ReferenceKind::Auto,
            hmc: HmcSettings { n_iter: 50_000, adapt_iters: 2000, ..HmcSettings::default() },
            grid_points: 4001,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Metric columns of the summary table, in order.
    #[serde(default = "default_columns")]
    pub columns: Vec<String>,
    #[serde(default = "yes")]
    pub write_samples: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { columns: default_columns(), write_samples: true }
    }
}

fn default_columns() -> Vec<String> {
    DEFAULT_COLUMNS.iter().map(|s| s.to_string()).collect()
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Base seed; repetition r uses `seed + r`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub repetitions: usize,
    pub algorithms: Vec<Algorithm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Worker threads; defaults to min(C, available cores).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    pub model: ModelSpec,
    pub data: DataSpec,
    pub batches: BatchSpec,
    #[serde(default)]
    pub gp: GpSpec,
    #[serde(default)]
    pub sampling: SamplingSpec,
    #[serde(default)]
    pub importance: ImportanceSpec,
    #[serde(default)]
    pub reference: ReferenceSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

fn one() -> usize {
    1
}

impl FromStr for ExperimentConfig {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s).context("parsing experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        text.parse().with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.algorithms.is_empty() {
            bail!("algorithm list is empty");
        }
        let counts = [
            ("repetitions", self.repetitions),
            ("batches.count", self.batches.count),
            ("batches.thin", self.batches.thin),
            ("batches.hmc.n_iter", self.batches.hmc.n_iter),
            ("sampling.n_draws", self.sampling.n_draws),
            ("importance.m_realisations", self.importance.m_realisations),
            ("gp.restarts", self.gp.restarts),
            ("data.n", self.data.n),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            bail!("{name} must be at least 1");
        }
        if self.workers == Some(0) {
            bail!("workers must be at least 1");
        }
        if self.batches.thin > self.batches.hmc.n_iter {
            bail!("batches.thin ({}) exceeds batches.hmc.n_iter ({})", self.batches.thin, self.batches.hmc.n_iter);
        }
        if self.data.csv.is_none() && self.batches.count > self.data.n {
            bail!("cannot split {} rows into {} batches", self.data.n, self.batches.count);
        }
        if self.reference.kind == ReferenceKind::Grid && self.reference.grid_points < 3 {
            bail!("reference.grid_points must be at least 3");
        }
        if !(self.importance.dof > 2.0) {
            bail!("importance.dof must exceed 2");
        }
        crate::emit::check_columns(&self.output.columns)?;
        let model = self.model.build()?;
        self.model.true_theta(&model)?;
        Ok(())
    }

    /// Algorithms in canonical order without repeats.
    pub fn algorithm_list(&self) -> Vec<Algorithm> {
        Algorithm::ALL.into_iter().filter(|a| self.algorithms.contains(a)).collect()
    }

    /// SHA-256 of the configuration with run-location and parallelism settings removed.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out_dir = None;
        canonical.workers = None;
        let json = serde_json::to_vec(&canonical).expect("config serialises");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        algorithms = ["gp_hmc", "consensus"]
        [model]
        name = "rare_bernoulli"
        [data]
        n = 1000
        [batches]
        count = 4
    "#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c: ExperimentConfig = MINIMAL.parse().unwrap();
        assert_eq!(c.repetitions, 1);
        assert_eq!(c.sampling.n_draws, 5000);
        assert_eq!(c.importance.m_realisations, 500);
        assert_eq!(c.algorithm_list(), vec![Algorithm::Consensus, Algorithm::GpHmc]);
    }

    #[test]
    fn hash_ignores_workers_and_out_dir() {
        let a: ExperimentConfig = MINIMAL.parse().unwrap();
        let mut b = a.clone();
        b.workers = Some(3);
        b.out_dir = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.seed = 9;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn rejects_bad_configs() {
        let empty = MINIMAL.replace(r#"["gp_hmc", "consensus"]"#, "[]");
        assert!(empty.parse::<ExperimentConfig>().is_err());
        let typo = MINIMAL.replace("count = 4", "cuont = 4");
        assert!(typo.parse::<ExperimentConfig>().is_err());
        let wrong_constant = MINIMAL.replace(r#"name = "rare_bernoulli""#, "name = \"rare_bernoulli\"\nsigma2 = 2.0");
        let err = wrong_constant.parse::<ExperimentConfig>().unwrap_err();
        assert!(format!("{err:#}").contains("sigma2"));
        let too_many = MINIMAL.replace("count = 4", "count = 4000");
        assert!(too_many.parse::<ExperimentConfig>().is_err());
    }

    #[test]
    fn model_overrides_apply() {
        let spec = ModelSpec {
            name: ModelName::GaussianMean,
            dim: Some(3),
            sigma2: Some(2.0),
            prior_var: None,
            prior_a: None,
            prior_b: None,
            beta1: None,
            beta2: None,
            true_theta: None,
        };
        let m = spec.build().unwrap();
        assert!(matches!(m, Model::GaussianMean { dim: 3, sigma2, .. } if sigma2 == 2.0));
        assert_eq!(spec.true_theta(&m).unwrap().len(), 3);
    }
}
