//! CSV ingestion and emission.
//!
//! Datasets are headered CSVs. By default the X/Y/Z blocks are selected by
//! column-name prefix (`x_*`, `y_*`, `z_*`, or the bare names `x`, `y`,
//! `z`); explicit column lists override the prefix rule. Floating-point
//! output uses shortest round-trip formatting, so equal runs produce
//! byte-identical files.

use std::io::Write;
use std::path::Path;

use crate::dataset::{Dataset, Matrix};
use crate::error::{Error, Result};
use crate::harness::{PowerCell, StudySpec};
use crate::TestOutcome;

/// How dataset columns map onto the X/Y/Z blocks.
#[derive(Debug, Clone, Default)]
pub struct ColumnSpec {
    pub x: Option<Vec<String>>,
    pub y: Option<Vec<String>>,
    pub z: Option<Vec<String>>,
}

fn prefix_match(header: &str, block: char) -> bool {
    let h = header.trim();
    h.len() == 1 && h.starts_with(block) || h.starts_with(&format!("{block}_"))
}

fn select_indices(
    headers: &[String],
    wanted: &Option<Vec<String>>,
    block: char,
) -> Result<Vec<usize>> {
    match wanted {
        Some(names) => names
            .iter()
            .map(|name| {
                headers
                    .iter()
                    .position(|h| h == name)
                    .ok_or_else(|| Error::invalid(format!("column {name:?} not found in header")))
            })
            .collect(),
        None => Ok(headers
            .iter()
            .enumerate()
            .filter(|(_, h)| prefix_match(h, block))
            .map(|(i, _)| i)
            .collect()),
    }
}

/// Reads a dataset from a headered CSV file.
pub fn read_dataset_csv(path: &Path, spec: &ColumnSpec) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|s| s.to_string()).collect();
    let x_idx = select_indices(&headers, &spec.x, 'x')?;
    let y_idx = select_indices(&headers, &spec.y, 'y')?;
    let z_idx = select_indices(&headers, &spec.z, 'z')?;
    for (idx, block) in [(&x_idx, "x"), (&y_idx, "y"), (&z_idx, "z")] {
        if idx.is_empty() {
            return Err(Error::invalid(format!(
                "no columns selected for block {block}; headers are {headers:?}"
            )));
        }
    }

    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut z = Vec::new();
    let mut rows = 0usize;
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let row = row_idx + 1; // 1-based data row
        let parse = |indices: &[usize], out: &mut Vec<f64>| -> Result<()> {
            for &i in indices {
                let raw = record.get(i).unwrap_or("");
                let v: f64 = raw.trim().parse().map_err(|_| Error::BadCell {
                    row,
                    column: headers[i].clone(),
                    value: raw.to_string(),
                })?;
                out.push(v);
            }
            Ok(())
        };
        parse(&x_idx, &mut x)?;
        parse(&y_idx, &mut y)?;
        parse(&z_idx, &mut z)?;
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::invalid("dataset file has no data rows"));
    }
    Dataset::new(
        Matrix::new(rows, x_idx.len(), x)?,
        Matrix::new(rows, y_idx.len(), y)?,
        Matrix::new(rows, z_idx.len(), z)?,
    )
}

/// Writes a dataset with the default prefixed headers (x_1, ..., y_1, ...,
/// z_1, ...). Reading the file back yields bit-identical matrices.
pub fn write_dataset_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = Vec::new();
    for (count, block) in [(data.d_x(), "x"), (data.d_y(), "y"), (data.d_z(), "z")] {
        for j in 1..=count {
            header.push(format!("{block}_{j}"));
        }
    }
    writer.write_record(&header)?;
    for i in 0..data.n() {
        let mut record = Vec::with_capacity(header.len());
        for block in [data.x(), data.y(), data.z()] {
            for v in block.row(i) {
                record.push(format!("{v}"));
            }
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

pub const POWER_CSV_HEADER: &str =
    "scenario,param,n,d,method,alpha,B,n_reps,rejection_rate,mc_std_err,seed,wall_ms";

/// One CSV row for a finished power cell. `cell_seed` is the derived seed
/// that reproduces the cell in isolation. Wall time is reported only when
/// `include_timing` is set, keeping default output byte-deterministic.
pub fn power_csv_row(
    spec: &StudySpec,
    cell: &PowerCell,
    cell_seed: u64,
    include_timing: bool,
) -> String {
    let sc = &cell.scenario;
    let wall_ms = if include_timing {
        cell.wall_time.as_millis()
    } else {
        0
    };
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        sc.name().as_str(),
        sc.param().map(|p| format!("{p}")).unwrap_or_default(),
        sc.n(),
        sc.d_z(),
        spec.method.as_str(),
        spec.alpha,
        spec.resamples,
        cell.n_reps,
        cell.rejection_rate,
        cell.mc_std_err,
        cell_seed,
        wall_ms,
    )
}

/// Machine-readable single-test record (one header line, one data line).
pub fn write_outcome_record(out: &mut dyn Write, outcome: &TestOutcome, n: usize) -> Result<()> {
    writeln!(
        out,
        "method,n,alpha,resamples,statistic,p_value,critical_value,reject,seed"
    )?;
    writeln!(
        out,
        "{},{},{},{},{},{},{},{},{}",
        outcome.method,
        n,
        outcome.alpha,
        outcome.resamples,
        outcome.statistic,
        outcome.p_value,
        outcome
            .critical_value
            .map(|c| format!("{c}"))
            .unwrap_or_default(),
        outcome.reject,
        outcome.seed,
    )?;
    Ok(())
}
