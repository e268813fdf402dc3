use std::io::Write;

use anyhow::{bail, Result};
use gp_merge::metrics::DiscrepancyReport;
use serde::Serialize;

pub const DEFAULT_COLUMNS: [&str; 7] = [
    "mahalanobis",
    "kl_gaussian_fwd",
    "kl_gaussian_rev",
    "kl_knn_fwd",
    "kl_knn_rev",
    "concentration_rho",
    "skew_eta",
];

pub fn metric_value(report: &DiscrepancyReport, column: &str) -> Option<f64> {
    match column {
        "mahalanobis" => Some(report.mahalanobis),
        "kl_gaussian_fwd" => Some(report.kl_gaussian_fwd),
        "kl_gaussian_rev" => Some(report.kl_gaussian_rev),
        "kl_knn_fwd" => report.kl_knn_fwd,
        "kl_knn_rev" => report.kl_knn_rev,
        "concentration_rho" => report.concentration_rho,
        "skew_eta" => Some(report.skew_eta),
        _ => None,
    }
}

pub fn check_columns(columns: &[String]) -> Result<()> {
    if columns.is_empty() {
        bail!("output.columns is empty");
    }
    for c in columns {
        if !DEFAULT_COLUMNS.contains(&c.as_str()) {
            bail!("unknown metric column '{c}' (known: {})", DEFAULT_COLUMNS.join(", "));
        }
    }
    Ok(())
}

/// Mean and sample standard deviation over the repetitions that produced the metric.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub algorithm: String,
    pub repetitions: usize,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryTable {
    pub config_hash: String,
    pub seed: u64,
    pub columns: Vec<String>,
    pub rows: Vec<SummaryRow>,
}

fn mean_sd(values: &[f64]) -> Cell {
    let n = values.len();
    if n == 0 {
        return Cell { mean: None, sd: None, count: 0 };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Cell { mean: Some(mean), sd: Some(sd), count: n }
}

/// Per-algorithm summary in first-appearance order of the algorithms.
pub fn emit_results(
    reports: &[(String, DiscrepancyReport)],
    columns: &[String],
    config_hash: &str,
    seed: u64,
) -> Result<SummaryTable> {
    if reports.is_empty() {
        bail!("no reports to summarise");
    }
    check_columns(columns)?;
    let mut order: Vec<&str> = Vec::new();
    for (alg, _) in reports {
        if !order.contains(&alg.as_str()) {
            order.push(alg);
        }
    }
    let rows = order
        .into_iter()
        .map(|alg| {
            let mine: Vec<&DiscrepancyReport> = reports.iter().filter(|(a, _)| a == alg).map(|(_, r)| r).collect();
            let cells = columns
                .iter()
                .map(|c| mean_sd(&mine.iter().filter_map(|r| metric_value(r, c)).collect::<Vec<_>>()))
                .collect();
            SummaryRow { algorithm: alg.to_string(), repetitions: mine.len(), cells }
        })
        .collect();
    Ok(SummaryTable { config_hash: config_hash.to_string(), seed, columns: columns.to_vec(), rows })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl SummaryTable {
    /// `algorithm,repetitions,<col>_mean,<col>_sd,...` preceded by a provenance comment.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# config_hash={} seed={}", self.config_hash, self.seed)?;
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["algorithm".to_string(), "repetitions".to_string()];
        for c in &self.columns {
            header.push(format!("{c}_mean"));
            header.push(format!("{c}_sd"));
        }
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.algorithm.clone(), row.repetitions.to_string()];
            for cell in &row.cells {
                rec.push(fmt_opt(cell.mean));
                rec.push(fmt_opt(cell.sd));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
