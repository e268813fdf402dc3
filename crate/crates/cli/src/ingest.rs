use std::path::Path;

use anyhow::{bail, Context, Result};
use gp_merge::targets::Dataset;
use nalgebra::{DMatrix, DVector};

const MAX_LISTED_ROWS: usize = 20;

/// Reads a headed CSV in one pass. Rows with empty, unparseable or non-finite cells
/// are collected and reported together; data rows are numbered from 1.
pub fn ingest_csv(path: &Path, response_column: Option<&str>, covariate_columns: &[String]) -> Result<Dataset<f64>> {
    if covariate_columns.is_empty() {
        bail!("no observation columns requested");
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("column '{name}' not found in {} (columns: {})", path.display(), headers.iter().collect::<Vec<_>>().join(", ")))
    };
    let cov_idx = covariate_columns.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    let resp_idx = response_column.map(find).transpose()?;

    let p = cov_idx.len();
    let mut values = Vec::new();
    let mut responses = Vec::new();
    let mut bad: Vec<(usize, String)> = Vec::new();
    let mut record = csv::StringRecord::new();
    let mut row = 0;
    while reader.read_record(&mut record).with_context(|| format!("reading {}", path.display()))? {
        row += 1;
        let parse = |idx: usize, name: &str| -> std::result::Result<f64, String> {
            let cell = record.get(idx).unwrap_or("");
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                Ok(_) => Err(format!("{name} is not finite")),
                Err(_) if cell.is_empty() => Err(format!("{name} is missing")),
                Err(_) => Err(format!("{name} = '{cell}' is not a number")),
            }
        };
        let mut problems = Vec::new();
        for (&idx, name) in cov_idx.iter().zip(covariate_columns) {
            match parse(idx, name) {
                Ok(v) => values.push(v),
                Err(e) => problems.push(e),
            }
        }
        if let (Some(idx), Some(name)) = (resp_idx, response_column) {
            match parse(idx, name) {
                Ok(v) => responses.push(v),
                Err(e) => problems.push(e),
            }
        }
        if !problems.is_empty() {
            bad.push((row, problems.join("; ")));
        }
    }
    if !bad.is_empty() {
        let listed: Vec<String> = bad.iter().take(MAX_LISTED_ROWS).map(|(r, why)| format!("row {r}: {why}")).collect();
        let more = if bad.len() > MAX_LISTED_ROWS { format!(" (and {} more)", bad.len() - MAX_LISTED_ROWS) } else { String::new() };
        bail!("{} bad rows in {}: {}{more}", bad.len(), path.display(), listed.join(", "));
    }
    if row == 0 {
        bail!("{} has no data rows", path.display());
    }
    let observations = DMatrix::from_row_slice(row, p, &values);
    let responses = resp_idx.map(|_| DVector::from_vec(responses));
    Ok(Dataset::new(observations, responses)?)
}
