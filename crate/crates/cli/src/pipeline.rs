use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use gp_merge::gp::{fit_hyperparams, GpSurrogate};
use gp_merge::hmc::{postprocess, run_hmc, ChainRecord};
use gp_merge::merge::{consensus_merge_chains, student_t_from_sample, student_t_proposal, ConsensusApprox, MergedGp};
use gp_merge::metrics::{discrepancy_report, DiscrepancyReport};
use gp_merge::optim::{minimize_box, LbfgsOptions};
use gp_merge::recombine::{
    gp_hmc_sample, resample, run_dis, run_gp_is, Functional, FunctionalSummary, GpIsConfig, WeightedSample,
};
use gp_merge::rng::{derive_seed, tag};
use gp_merge::targets::{generate_data, partition_data, Batch, Dataset, Model, Subposterior};
use gp_merge::LogDensity;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use rayon::prelude::*;

use crate::config::{Algorithm, ExperimentConfig, ProposalSource, ReferenceKind};
use crate::ingest::ingest_csv;

/// One approximation produced in one repetition.
#[derive(Debug, Clone)]
pub struct AlgorithmRun {
    pub algorithm: Algorithm,
    /// Draws on the natural parameter scale (resampled for the weighted methods).
    pub samples: DMatrix<f64>,
    /// Importance-weighted sample on the sampling scale, for DIS and GP-IS.
    pub weighted: Option<WeightedSample<f64>>,
    /// GP-IS spread of the per-realisation estimates.
    pub summary: Option<Vec<FunctionalSummary>>,
    pub report: Option<DiscrepancyReport>,
    pub wall_time_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct Repetition {
    pub index: usize,
    pub seed: u64,
    /// Full batch chains, adaptation rows included.
    pub batch_chains: Vec<ChainRecord<f64>>,
    pub merged: Option<MergedGp<f64>>,
    pub consensus: Option<ConsensusApprox<f64>>,
    /// Unthinned GP-HMC chain on the sampling scale.
    pub gp_hmc_chain: Option<ChainRecord<f64>>,
    pub runs: Vec<AlgorithmRun>,
    pub failures: Vec<Failure>,
    pub timings: Vec<(String, f64)>,
}

impl Repetition {
    pub fn run(&self, algorithm: Algorithm) -> Option<&AlgorithmRun> {
        self.runs.iter().find(|r| r.algorithm == algorithm)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub config_hash: String,
    pub model: Model<f64>,
    pub data: Arc<Dataset<f64>>,
    pub true_theta: Option<DVector<f64>>,
    pub reference_kind: ReferenceKind,
    /// Natural-scale reference draws.
    pub reference: Option<DMatrix<f64>>,
    pub reference_seconds: f64,
    pub repetitions: Vec<Repetition>,
    pub failures: Vec<Failure>,
}

impl ExperimentOutcome {
    pub fn reports(&self) -> Vec<(String, DiscrepancyReport)> {
        self.repetitions
            .iter()
            .flat_map(|r| r.runs.iter().filter_map(|a| a.report.clone().map(|m| (a.algorithm.to_string(), m))))
            .collect()
    }

    pub fn has_failures(&self) -> bool {
        !self.failures.is_empty() || self.repetitions.iter().any(|r| !r.failures.is_empty())
    }
}

/// Posterior mean and marginal variances on the natural scale for conjugate models.
pub fn analytic_moments(model: &Model<f64>, data: &Dataset<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
    match *model {
        Model::RareBernoulli { prior_a, prior_b } => {
            let k = data.observations().sum();
            let (a, b) = (prior_a + k, prior_b + data.n() as f64 - k);
            let mean = a / (a + b);
            let var = a * b / ((a + b).powi(2) * (a + b + 1.0));
            Some((DVector::from_element(1, mean), DVector::from_element(1, var)))
        }
        Model::GaussianMean { dim, sigma2, prior_var } => {
            let prec = data.n() as f64 / sigma2 + 1.0 / prior_var;
            let sums = data.observations().row_sum().transpose();
            Some((sums / (sigma2 * prec), DVector::from_element(dim, 1.0 / prec)))
        }
        _ => None,
    }
}

fn analytic_draws(model: &Model<f64>, data: &Dataset<f64>, n: usize, seed: u64) -> Option<DMatrix<f64>> {
    let (mean, var) = analytic_moments(model, data)?;
    let mut rng = gp_merge::rng::seeded(seed);
    match *model {
        Model::RareBernoulli { prior_a, prior_b } => {
            let k = data.observations().sum();
            let beta = Beta::new(prior_a + k, prior_b + data.n() as f64 - k).ok()?;
            Some(DMatrix::from_fn(n, 1, |_, _| beta.sample(&mut rng)))
        }
        _ => Some(DMatrix::from_fn(n, mean.len(), |_, j| mean[j] + var[j].sqrt() * rng.sample::<f64, _>(StandardNormal))),
    }
}

/// Maximiser of a log-density found by bounded L-BFGS from the origin; the origin on failure.
pub fn find_mode<D: LogDensity<f64>>(target: &D) -> DVector<f64> {
    let d = target.dim();
    let zero = DVector::zeros(d);
    let bound = DVector::from_element(d, 1e3);
    minimize_box(
        |x| {
            let (v, g) = target.log_density_and_grad(x);
            (-v, -g)
        },
        &zero,
        &(-&bound),
        &bound,
        &LbfgsOptions::default(),
    )
    .map(|m| m.x)
    .unwrap_or(zero)
}

/// Inverse-CDF draws from a one-dimensional log-density tabulated on a two-stage grid.
pub fn grid_draws<D: LogDensity<f64>>(target: &D, half_width: f64, points: usize, n: usize, seed: u64) -> Result<DVector<f64>> {
    if target.dim() != 1 {
        bail!("grid reference needs a one-dimensional model");
    }
    let eval = |lo: f64, hi: f64, m: usize| -> (Vec<f64>, Vec<f64>) {
        let xs: Vec<f64> = (0..m).map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64).collect();
        let lp = xs.iter().map(|&x| target.log_density(&DVector::from_element(1, x))).collect();
        (xs, lp)
    };
    let (xs, lp) = eval(-half_width, half_width, points);
    let top = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        bail!("log-density is not finite anywhere on the coarse grid");
    }
    let keep: Vec<usize> = (0..xs.len()).filter(|&i| lp[i] > top - 60.0).collect();
    let step = xs[1] - xs[0];
    let lo = xs[keep[0]] - step;
    let hi = xs[*keep.last().unwrap()] + step;
    let (xs, lp) = eval(lo, hi, points);
    let top = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let dens: Vec<f64> = lp.iter().map(|v| (v - top).exp()).collect();
    let cells: Vec<f64> = dens.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let total: f64 = cells.iter().sum();
    let mut cdf = Vec::with_capacity(cells.len());
    let mut acc = 0.0;
    for c in &cells {
        acc += c / total;
        cdf.push(acc);
    }
    let mut rng = gp_merge::rng::seeded(seed);
    let h = xs[1] - xs[0];
    Ok(DVector::from_fn(n, |_, _| {
        let u: f64 = rng.random();
        let i = cdf.partition_point(|&c| c < u).min(cells.len() - 1);
        // Linear density within the cell.
        let (a, b) = (dens[i], dens[i + 1]);
        let v: f64 = rng.random();
        let t = if (a - b).abs() < 1e-12 * a.max(b) { v } else { ((a * a + v * (b * b - a * a)).sqrt() - a) / (b - a) };
        xs[i] + h * t
    }))
}

fn natural(model: &Model<f64>, draws: &DMatrix<f64>) -> DMatrix<f64> {
    match model {
        Model::RareBernoulli { .. } => {
            let mut out = draws.clone();
            for mut row in out.row_iter_mut() {
                let t = model.to_natural(&row.transpose());
                row.copy_from(&t.transpose());
            }
            out
        }
        _ => draws.clone(),
    }
}

fn prior_half_width(model: &Model<f64>) -> f64 {
    match *model {
        Model::WarpedGaussian { prior_var, .. }
        | Model::GaussianMixture { prior_var }
        | Model::LogisticRegression { prior_var, .. }
        | Model::LaplaceMixture { prior_var, .. }
        | Model::GaussianMean { prior_var, .. } => 10.0 * prior_var.sqrt(),
        Model::RareBernoulli { .. } => 25.0,
    }
}

fn load_data(cfg: &ExperimentConfig, model: &Model<f64>, truth: Option<&DVector<f64>>) -> Result<Dataset<f64>> {
    match &cfg.data.csv {
        Some(src) => ingest_csv(&src.path, src.response.as_deref(), &src.columns),
        None => Ok(generate_data(model, cfg.data.n, truth.expect("synthetic data has a true parameter"), cfg.data.seed)?),
    }
}

fn reference(cfg: &ExperimentConfig, model: &Model<f64>, data: &Arc<Dataset<f64>>) -> Result<(ReferenceKind, Option<DMatrix<f64>>)> {
    let n = cfg.sampling.n_draws;
    let seed = derive_seed(cfg.data.seed, tag::REFERENCE, 0);
    let kind = match cfg.reference.kind {
        ReferenceKind::Auto if analytic_moments(model, data).is_some() => ReferenceKind::Analytic,
        ReferenceKind::Auto if model.dim() == 1 => ReferenceKind::Grid,
        ReferenceKind::Auto => ReferenceKind::Hmc,
        k => k,
    };
    let draws = match kind {
        ReferenceKind::None => None,
        ReferenceKind::Analytic => Some(
            analytic_draws(model, data, n, seed)
                .with_context(|| format!("no analytic posterior for model {}", model.name().as_str()))?,
        ),
        ReferenceKind::Grid => {
            let full = Subposterior::full(model, data)?;
            let x = grid_draws(&full, prior_half_width(model), cfg.reference.grid_points, n, seed)?;
            Some(natural(model, &DMatrix::from_column_slice(n, 1, x.as_slice())))
        }
        ReferenceKind::Hmc => {
            let full = Subposterior::full(model, data)?;
            let settings = &cfg.reference.hmc;
            let thin = (settings.n_iter / n).max(1);
            let chain = run_hmc(&full, &settings.to_config(settings.n_iter, seed), &find_mode(&full))?;
            let kept = postprocess(&chain, thin, false)?;
            let rows = kept.len().min(n);
            Some(natural(model, &kept.draws.rows(0, rows).into_owned()))
        }
        ReferenceKind::Auto => unreachable!(),
    };
    Ok((kind, draws))
}

struct BatchFit {
    chain: ChainRecord<f64>,
    surrogate: GpSurrogate<f64>,
}

fn fit_batch(cfg: &ExperimentConfig, model: &Model<f64>, batch: &Batch<f64>, c_total: usize, seed: u64) -> Result<BatchFit> {
    let id = batch.batch_id as u64;
    let sub = Subposterior::new(model, batch, c_total)?;
    let hmc = cfg.batches.hmc.to_config(cfg.batches.hmc.n_iter, derive_seed(seed, tag::BATCH_CHAIN, id));
    let chain = run_hmc(&sub, &hmc, &find_mode(&sub)).with_context(|| format!("batch {id} chain"))?;
    let training = postprocess(&chain, cfg.batches.thin, true)?;
    let surrogate = fit_hyperparams(&training, &cfg.gp.options(derive_seed(seed, tag::GP_FIT, id)))
        .with_context(|| format!("batch {id} GP fit"))?;
    Ok(BatchFit { chain, surrogate })
}

struct Shared<'a> {
    cfg: &'a ExperimentConfig,
    model: &'a Model<f64>,
    data: &'a Arc<Dataset<f64>>,
    truth: Option<&'a DVector<f64>>,
    reference: Option<&'a DMatrix<f64>>,
    progress: bool,
}

fn timed<R>(timings: &mut Vec<(String, f64)>, stage: &str, f: impl FnOnce() -> R) -> R {
    let start = Instant::now();
    let out = f();
    timings.push((stage.to_string(), start.elapsed().as_secs_f64()));
    out
}

fn run_repetition(sh: &Shared<'_>, index: usize) -> Repetition {
    let cfg = sh.cfg;
    let seed = cfg.seed.wrapping_add(index as u64);
    let mut rep = Repetition {
        index,
        seed,
        batch_chains: Vec::new(),
        merged: None,
        consensus: None,
        gp_hmc_chain: None,
        runs: Vec::new(),
        failures: Vec::new(),
        timings: Vec::new(),
    };
    let fail = |rep: &mut Repetition, stage: &str, e: anyhow::Error| {
        rep.failures.push(Failure { stage: stage.to_string(), message: format!("{e:#}") });
    };
    let c = cfg.batches.count;
    let batches = match partition_data(sh.data, c, seed) {
        Ok(b) => b,
        Err(e) => {
            fail(&mut rep, "partition", e.into());
            return rep;
        }
    };
    let fits: Vec<Result<BatchFit>> =
        timed(&mut rep.timings, "batches", || batches.par_iter().map(|b| fit_batch(cfg, sh.model, b, c, seed)).collect());
    let mut surrogates = Vec::with_capacity(c);
    for f in fits {
        match f {
            Ok(f) => {
                rep.batch_chains.push(f.chain);
                surrogates.push(f.surrogate);
            }
            Err(e) => fail(&mut rep, "batches", e),
        }
    }
    if !rep.failures.is_empty() {
        return rep;
    }
    let merged = match MergedGp::new(surrogates) {
        Ok(m) => m,
        Err(e) => {
            fail(&mut rep, "merge", e.into());
            return rep;
        }
    };
    if sh.progress {
        eprintln!("repetition {index}: {c} batch chains and GP fits done");
    }

    let algorithms = cfg.algorithm_list();
    let wants = |a: Algorithm| algorithms.contains(&a);
    let needs_consensus = wants(Algorithm::Consensus) || (wants(Algorithm::GpIs) && cfg.importance.proposal == ProposalSource::Consensus);
    let needs_gp_hmc = wants(Algorithm::GpHmc)
        || wants(Algorithm::Dis)
        || (wants(Algorithm::GpIs) && cfg.importance.proposal == ProposalSource::GpHmc);
    let n = cfg.sampling.n_draws;
    let mut runs: Vec<(Algorithm, Result<(DMatrix<f64>, Option<WeightedSample<f64>>, Option<Vec<FunctionalSummary>>)>, f64)> = Vec::new();

    let mut consensus_draws = None;
    if needs_consensus {
        let start = Instant::now();
        match consensus_merge_chains(&rep.batch_chains) {
            Ok((draws, approx)) => {
                rep.consensus = Some(approx);
                consensus_draws = Some(draws);
            }
            Err(e) => fail(&mut rep, "consensus", e.into()),
        }
        rep.timings.push(("consensus".into(), start.elapsed().as_secs_f64()));
        if wants(Algorithm::Consensus) {
            let out = consensus_draws.clone().map(|d| (d, None, None)).ok_or_else(|| anyhow!("consensus merge failed"));
            runs.push((Algorithm::Consensus, out, start.elapsed().as_secs_f64()));
        }
    }

    let mut gp_hmc_time = 0.0;
    if needs_gp_hmc {
        let start = Instant::now();
        let hmc = cfg.sampling.hmc.to_config(n, derive_seed(seed, tag::GP_HMC, 0));
        match gp_hmc_sample(&merged, &hmc, None) {
            Ok(chain) => rep.gp_hmc_chain = Some(chain),
            Err(e) => fail(&mut rep, "gp_hmc", e.into()),
        }
        gp_hmc_time = start.elapsed().as_secs_f64();
        rep.timings.push(("gp_hmc".into(), gp_hmc_time));
        if wants(Algorithm::GpHmc) {
            let out = rep.gp_hmc_chain.as_ref().map(|c| (c.sampling_draws(), None, None)).ok_or_else(|| anyhow!("GP-HMC failed"));
            runs.push((Algorithm::GpHmc, out, gp_hmc_time));
        }
    }

    if wants(Algorithm::Dis) {
        let start = Instant::now();
        let out = (|| {
            let chain = rep.gp_hmc_chain.as_ref().context("DIS needs the GP-HMC sample")?;
            let points = chain.sampling_draws();
            let log_q: Vec<f64> = points.row_iter().map(|r| merged.log_expected_density(&r.transpose())).collect();
            let weighted = run_dis(&points, &log_q, sh.model, &batches)?;
            let draws = resample(&weighted, n, derive_seed(seed, tag::RESAMPLE, 0))?;
            Ok((draws, Some(weighted), None))
        })();
        let t = start.elapsed().as_secs_f64();
        rep.timings.push(("dis".into(), t));
        runs.push((Algorithm::Dis, out, t + gp_hmc_time));
    }

    if wants(Algorithm::GpIs) {
        let start = Instant::now();
        let out = (|| {
            let dof = cfg.importance.dof;
            let proposal = match cfg.importance.proposal {
                ProposalSource::Consensus => student_t_proposal(rep.consensus.as_ref().context("GP-IS needs the consensus moments")?, dof)?,
                ProposalSource::GpHmc => {
                    student_t_from_sample(&rep.gp_hmc_chain.as_ref().context("GP-IS needs the GP-HMC sample")?.sampling_draws(), dof)?
                }
            };
            let functionals: Vec<Functional<f64>> = (0..sh.model.dim())
                .map(|i| {
                    let m = sh.model.clone();
                    Functional::new(format!("E[theta_{}]", i + 1), move |x: &DVector<f64>| m.to_natural(x)[i])
                })
                .collect();
            let is_cfg = GpIsConfig {
                n_points: n,
                m_realisations: cfg.importance.m_realisations,
                seed: derive_seed(seed, tag::PROPOSAL, 0),
                factorization: cfg.importance.factorization,
            };
            let res = run_gp_is(&merged, &proposal, &is_cfg, &functionals)?;
            let draws = resample(&res.weighted, n, derive_seed(seed, tag::RESAMPLE, 1))?;
            Ok((draws, Some(res.weighted), Some(res.summary)))
        })();
        let t = start.elapsed().as_secs_f64();
        rep.timings.push(("gp_is".into(), t));
        runs.push((Algorithm::GpIs, out, t));
    }

    for (k, (algorithm, out, secs)) in runs.into_iter().enumerate() {
        match out {
            Ok((draws, weighted, summary)) => {
                let samples = natural(sh.model, &draws);
                let report = match sh.reference {
                    Some(r) => match discrepancy_report(r, &samples, sh.truth, derive_seed(seed, tag::METRICS, k as u64)) {
                        Ok(mut m) => {
                            m.wall_time_seconds = secs;
                            Some(m)
                        }
                        Err(e) => {
                            fail(&mut rep, &format!("metrics/{algorithm}"), e.into());
                            None
                        }
                    },
                    None => None,
                };
                rep.runs.push(AlgorithmRun { algorithm, samples, weighted, summary, report, wall_time_seconds: secs });
            }
            Err(e) => fail(&mut rep, algorithm.as_str(), e),
        }
    }
    rep.merged = Some(merged);
    if sh.progress {
        eprintln!("repetition {index}: done ({} failures)", rep.failures.len());
    }
    rep
}

pub fn worker_count(cfg: &ExperimentConfig) -> usize {
    cfg.workers.unwrap_or_else(|| {
        let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
        cfg.batches.count.min(cores)
    })
}

/// Runs every repetition. Stage failures inside a repetition are recorded, not raised.
pub fn run_experiment(cfg: &ExperimentConfig, progress: bool) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let model = cfg.model.build()?;
    let truth = match cfg.data.csv {
        None => Some(cfg.model.true_theta(&model)?),
        Some(_) => cfg.model.true_theta.as_ref().map(|_| cfg.model.true_theta(&model)).transpose()?,
    };
    let data = Arc::new(load_data(cfg, &model, truth.as_ref())?);
    if data.n() < cfg.batches.count {
        bail!("cannot split {} rows into {} batches", data.n(), cfg.batches.count);
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(worker_count(cfg)).build()?;
    pool.install(|| {
        let mut failures = Vec::new();
        let start = Instant::now();
        let (reference_kind, reference) = match reference(cfg, &model, &data) {
            Ok(r) => r,
            Err(e) => {
                failures.push(Failure { stage: "reference".into(), message: format!("{e:#}") });
                (cfg.reference.kind, None)
            }
        };
        let reference_seconds = start.elapsed().as_secs_f64();
        if progress {
            eprintln!("reference ({reference_kind:?}) ready in {reference_seconds:.1}s");
        }
        let sh = Shared { cfg, model: &model, data: &data, truth: truth.as_ref(), reference: reference.as_ref(), progress };
        let repetitions = (0..cfg.repetitions).map(|r| run_repetition(&sh, r)).collect();
        Ok(ExperimentOutcome {
            config_hash: cfg.hash(),
            model: model.clone(),
            data: Arc::clone(&data),
            true_theta: truth.clone(),
            reference_kind,
            reference,
            reference_seconds,
            repetitions,
            failures,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use gp_merge::density::IsoGaussian;

    #[test]
    fn grid_draws_match_gaussian_moments() {
        let target = IsoGaussian { mean: DVector::from_element(1, 0.3), sd: 0.02 };
        let x = grid_draws(&target, 10.0, 2001, 20_000, 1).unwrap();
        let m = x.mean();
        let sd = x.variance().sqrt();
        assert!((m - 0.3).abs() < 3.0 * 0.02 / (20_000f64).sqrt() * 1.5, "{m}");
        assert!((sd - 0.02).abs() < 0.02 * 0.03, "{sd}");
    }

    #[test]
    fn mode_of_gaussian() {
        let target = IsoGaussian { mean: DVector::from_vec(vec![1.0, -2.0]), sd: 0.5 };
        let m = find_mode(&target);
        assert!((m[0] - 1.0).abs() < 1e-6 && (m[1] + 2.0).abs() < 1e-6);
    }

    #[test]
    fn bernoulli_moments() {
        let obs = DMatrix::from_fn(10, 1, |i, _| if i < 3 { 1.0 } else { 0.0 });
        let data = Dataset::new(obs, None).unwrap();
        let (m, v) = analytic_moments(&Model::rare_bernoulli(), &data).unwrap();
        assert!((m[0] - 5.0 / 14.0).abs() < 1e-15);
        assert!((v[0] - 5.0 * 9.0 / (196.0 * 15.0)).abs() < 1e-15);
    }
}
