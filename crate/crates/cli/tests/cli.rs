use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;

use gp_merge::hmc::mcse_mean;
use gp_merge_cli::config::{Algorithm, ExperimentConfig};
use gp_merge_cli::ingest::ingest_csv;
use gp_merge_cli::pipeline::analytic_moments;
use gp_merge_cli::run_experiment;

const SMALL: &str = r#"
seed = 4
repetitions = 2
algorithms = ["consensus", "gp_hmc", "dis", "gp_is"]

[model]
name = "gaussian_mean"
dim = 1

[data]
n = 600
seed = 9

[batches]
count = 3
thin = 4
hmc = { n_iter = 400, adapt_iters = 150 }

[sampling]
n_draws = 400
hmc = { n_iter = 400, adapt_iters = 200 }

[importance]
m_realisations = 40
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gp-merge"))
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write_small(dir: &Path) -> PathBuf {
    let path = dir.join("small.toml");
    fs::write(&path, SMALL).unwrap();
    path
}

fn run_small(config: &Path, out: &Path, extra: &[&str]) {
    let status = bin()
        .args(["run", "--quiet", "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .status()
        .unwrap();
    assert!(status.success(), "run exited with {status}");
}

#[test]
fn help_lists_subcommands() {
    let out = bin().arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("run") && text.contains("sample"));
}

#[test]
fn unknown_config_key_is_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, format!("{SMALL}\n[extra]\nbogus_key = 1\n")).unwrap();
    let out = bin().args(["run", "--quiet", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("extra"));
}

#[test]
fn empty_algorithm_list_is_rejected() {
    let text = SMALL.replace(r#"["consensus", "gp_hmc", "dis", "gp_is"]"#, "[]");
    let err = text.parse::<ExperimentConfig>().unwrap_err();
    assert!(format!("{err:#}").contains("algorithm list is empty"));
}

#[test]
fn rerun_and_worker_count_leave_outputs_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small(dir.path());
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    run_small(&cfg, &a, &["--workers", "1"]);
    run_small(&cfg, &b, &["--workers", "1"]);
    run_small(&cfg, &c, &["--workers", "3"]);
    for file in ["reports.json", "summary.json", "summary.csv", "rep_001/surrogates.json", "rep_000/samples_gp_is.csv"] {
        let first = fs::read(a.join(file)).unwrap();
        assert_eq!(first, fs::read(b.join(file)).unwrap(), "{file} differs on rerun");
        assert_eq!(first, fs::read(c.join(file)).unwrap(), "{file} differs across worker counts");
    }
}

#[test]
fn outputs_carry_hash_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small(dir.path());
    let out = dir.path().join("out");
    run_small(&cfg, &out, &["--algorithms", "consensus,gp_hmc"]);
    let mut loaded = ExperimentConfig::load(&cfg).unwrap();
    loaded.algorithms = vec![Algorithm::Consensus, Algorithm::GpHmc];
    let hash = loaded.hash();
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.starts_with(&format!("# config_hash={hash} seed=4")));
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[2].starts_with("consensus,2,") && lines[3].starts_with("gp_hmc,2,"));
    for file in ["rep_000/samples_consensus.csv", "rep_001/samples_gp_hmc.csv", "reference.csv"] {
        let text = fs::read_to_string(out.join(file)).unwrap();
        assert!(text.starts_with(&format!("# config_hash={hash}")), "{file}");
    }
    let reports: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("reports.json")).unwrap()).unwrap();
    let reports = reports.as_array().unwrap();
    assert_eq!(reports.len(), 4);
    assert!(reports.iter().all(|r| r["config_hash"] == hash.as_str()));
    assert!(!out.join("rep_000/samples_dis.csv").exists());
}

#[test]
fn sample_subcommand_reads_saved_surrogates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small(dir.path());
    let out = dir.path().join("out");
    run_small(&cfg, &out, &["--algorithms", "consensus"]);
    let draws = dir.path().join("draws.csv");
    let status = bin()
        .args(["sample", "--n", "300", "--seed", "2", "--surrogates"])
        .arg(out.join("rep_000/surrogates.json"))
        .arg("--out")
        .arg(&draws)
        .status()
        .unwrap();
    assert!(status.success());
    let text = fs::read_to_string(&draws).unwrap();
    assert_eq!(text.lines().count(), 302);
}

#[test]
fn single_batch_gp_hmc_matches_bernoulli_posterior() {
    let mut cfg = ExperimentConfig::load(&configs_dir().join("rare_bernoulli.toml")).unwrap();
    cfg.repetitions = 1;
    cfg.batches.count = 1;
    cfg.algorithms = vec![Algorithm::GpHmc];
    let outcome = run_experiment(&cfg, false).unwrap();
    assert!(!outcome.has_failures());
    let run = outcome.repetitions[0].run(Algorithm::GpHmc).unwrap();
    let (mean, _) = analytic_moments(&outcome.model, &outcome.data).unwrap();
    let x: Vec<f64> = run.samples.column(0).iter().copied().collect();
    let m = x.iter().sum::<f64>() / x.len() as f64;
    let se = mcse_mean(&x);
    assert!((m - mean[0]).abs() < 3.0 * se, "GP-HMC mean {m} vs {} (mcse {se})", mean[0]);
}

#[test]
fn ingest_million_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.csv");
    let mut f = std::io::BufWriter::new(fs::File::create(&path).unwrap());
    writeln!(f, "y,x1,x2").unwrap();
    for i in 0..1_000_000u32 {
        writeln!(f, "{},{},{}", i % 2, f64::from(i) * 1e-6, -f64::from(i % 7)).unwrap();
    }
    drop(f);
    let cols = vec!["x1".to_string(), "x2".to_string()];
    let data = ingest_csv(&path, Some("y"), &cols).unwrap();
    assert_eq!(data.n(), 1_000_000);
    assert_eq!(data.observations().ncols(), 2);
}
