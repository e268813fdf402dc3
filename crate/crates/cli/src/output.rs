use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use gp_merge::gp::GpSurrogate;
use gp_merge::metrics::DiscrepancyReport;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::emit::emit_results;
use crate::pipeline::{ExperimentOutcome, Failure};

#[derive(Debug, Clone, Serialize)]
pub struct ReportRecord<'a> {
    pub config_hash: &'a str,
    pub seed: u64,
    pub algorithm: &'a str,
    pub repetition: usize,
    pub metrics: &'a DiscrepancyReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ess: Option<f64>,
}

/// Fitted batch surrogates of one repetition, reloadable by the `sample` command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurrogateFile {
    pub config_hash: String,
    pub seed: u64,
    pub surrogates: Vec<GpSurrogate<f64>>,
}

#[derive(Serialize)]
struct FailureRecord<'a> {
    repetition: Option<usize>,
    stage: &'a str,
    message: &'a str,
}

#[derive(Serialize)]
struct Provenance<'a, T: Serialize> {
    config_hash: &'a str,
    seed: u64,
    #[serde(flatten)]
    body: T,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

/// Sample CSV with a `# config_hash=… seed=…` comment line before the header.
pub fn write_samples(path: &Path, samples: &DMatrix<f64>, config_hash: &str, seed: u64) -> Result<()> {
    let mut f = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(f, "# config_hash={config_hash} seed={seed}")?;
    let mut w = csv::Writer::from_writer(f);
    w.write_record((1..=samples.ncols()).map(|k| format!("theta_{k}")))?;
    for row in samples.row_iter() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes reports, summaries, samples, surrogates and timings under `dir`.
pub fn write_outputs(outcome: &ExperimentOutcome, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let hash = outcome.config_hash.as_str();
    let base_seed = cfg.seed;
    write_json(&dir.join("config.json"), &Provenance { config_hash: hash, seed: base_seed, body: cfg })?;

    if let (Some(r), true) = (&outcome.reference, cfg.output.write_samples) {
        write_samples(&dir.join("reference.csv"), r, hash, cfg.data.seed)?;
    }

    let mut records = Vec::new();
    let mut timings = Vec::new();
    let mut failures: Vec<FailureRecord> =
        outcome.failures.iter().map(|f: &Failure| FailureRecord { repetition: None, stage: &f.stage, message: &f.message }).collect();
    timings.push(serde_json::json!({ "repetition": null, "stage": "reference", "seconds": outcome.reference_seconds }));

    for rep in &outcome.repetitions {
        let rep_dir = dir.join(format!("rep_{:03}", rep.index));
        fs::create_dir_all(&rep_dir)?;
        let rep_records: Vec<ReportRecord> = rep
            .runs
            .iter()
            .filter_map(|run| {
                run.report.as_ref().map(|m| ReportRecord {
                    config_hash: hash,
                    seed: rep.seed,
                    algorithm: run.algorithm.as_str(),
                    repetition: rep.index,
                    metrics: m,
                    ess: run.weighted.as_ref().map(|w| w.ess),
                })
            })
            .collect();
        write_json(&rep_dir.join("reports.json"), &rep_records)?;
        records.extend(rep_records);
        if cfg.output.write_samples {
            for run in &rep.runs {
                write_samples(&rep_dir.join(format!("samples_{}.csv", run.algorithm)), &run.samples, hash, rep.seed)?;
            }
        }
        if let Some(summary) = rep.runs.iter().find_map(|r| r.summary.as_ref()) {
            write_json(&rep_dir.join("gp_is_summary.json"), &Provenance { config_hash: hash, seed: rep.seed, body: serde_json::json!({ "functionals": summary }) })?;
        }
        if let Some(merged) = &rep.merged {
            let file = SurrogateFile {
                config_hash: hash.to_string(),
                seed: rep.seed,
                surrogates: merged.surrogates().iter().map(|s| (**s).clone()).collect(),
            };
            write_json(&rep_dir.join("surrogates.json"), &file)?;
        }
        for (stage, secs) in &rep.timings {
            timings.push(serde_json::json!({ "repetition": rep.index, "stage": stage, "seconds": secs }));
        }
        for run in &rep.runs {
            timings.push(serde_json::json!({ "repetition": rep.index, "stage": format!("total/{}", run.algorithm), "seconds": run.wall_time_seconds }));
        }
        failures.extend(rep.failures.iter().map(|f| FailureRecord { repetition: Some(rep.index), stage: &f.stage, message: &f.message }));
    }

    write_json(&dir.join("reports.json"), &records)?;
    let reports = outcome.reports();
    if !reports.is_empty() {
        let table = emit_results(&reports, &cfg.output.columns, hash, base_seed)?;
        let mut f = BufWriter::new(File::create(dir.join("summary.csv"))?);
        table.write_csv(&mut f)?;
        f.flush()?;
        fs::write(dir.join("summary.json"), table.to_json()? + "\n")?;
    }
    write_json(&dir.join("timings.json"), &Provenance { config_hash: hash, seed: base_seed, body: serde_json::json!({ "entries": timings }) })?;
    write_json(&dir.join("failures.json"), &Provenance { config_hash: hash, seed: base_seed, body: serde_json::json!({ "failures": failures }) })?;
    Ok(())
}
