use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use gp_merge::merge::MergedGp;
use gp_merge::recombine::gp_hmc_sample;
use gp_merge_cli::config::{Algorithm, ExperimentConfig, HmcSettings};
use gp_merge_cli::output::{write_outputs, write_samples, SurrogateFile};
use gp_merge_cli::run_experiment;

#[derive(Parser)]
#[command(name = "gp-merge", version, about = "Divide-and-conquer MCMC with Gaussian-process merging")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config.
    Run {
        #[arg(short, long)]
        config: PathBuf,
        /// Output directory (overrides `out_dir` in the config).
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Base seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads override.
        #[arg(long)]
        workers: Option<usize>,
        /// Comma-separated subset of consensus,gp_hmc,dis,gp_is.
        #[arg(long, value_delimiter = ',')]
        algorithms: Option<Vec<Algorithm>>,
        #[arg(short, long)]
        quiet: bool,
    },
    /// Draw from the expected merged density of saved surrogates with HMC.
    Sample {
        #[arg(short, long)]
        surrogates: PathBuf,
        #[arg(short, long, default_value_t = 5000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV destination (sampling scale).
        #[arg(short, long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config, out, seed, workers, algorithms, quiet } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(w) = workers {
                cfg.workers = Some(w);
            }
            if let Some(a) = algorithms {
                cfg.algorithms = a;
            }
            if let Some(o) = out {
                cfg.out_dir = Some(o);
            }
            cfg.validate()?;
            let dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("results"));
            let outcome = run_experiment(&cfg, !quiet)?;
            write_outputs(&outcome, &cfg, &dir)?;
            if !quiet {
                eprintln!("results written to {}", dir.display());
            }
            if outcome.has_failures() {
                eprintln!("some stages failed; see {}", dir.join("failures.json").display());
            }
            Ok(!outcome.has_failures())
        }
        Command::Sample { surrogates, n, seed, out } => {
            if n == 0 {
                bail!("n must be at least 1");
            }
            let text = std::fs::read_to_string(&surrogates).with_context(|| format!("reading {}", surrogates.display()))?;
            let file: SurrogateFile = serde_json::from_str(&text).context("parsing surrogate file")?;
            let merged = MergedGp::new(file.surrogates)?;
            let hmc = HmcSettings { adapt_iters: 1000, ..HmcSettings::default() }.to_config(n, seed);
            let chain = gp_hmc_sample(&merged, &hmc, None)?;
            write_samples(&out, &chain.sampling_draws(), &file.config_hash, seed)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
