//! On-disk formats: the dataset CSV layout and the result JSON schema.
//!
//! Dataset CSV: header `y,x1,...,xp`, one sample per row, `.` decimal,
//! UTF-8, LF endings. Floats are written in shortest round-trip form, so
//! write -> read -> write is byte-stable.

use crate::CliError;
use lqs_core::Dataset;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<(), CliError> {
    let mut out = Vec::new();
    let p = data.p();
    let header: Vec<String> =
        std::iter::once("y".to_string()).chain((1..=p).map(|j| format!("x{j}"))).collect();
    writeln!(out, "{}", header.join(",")).expect("in-memory write");
    for i in 0..data.n() {
        let mut row = String::new();
        row.push_str(&format!("{}", data.y()[i]));
        for j in 0..p {
            row.push_str(&format!(",{}", data.x()[(i, j)]));
        }
        writeln!(out, "{row}").expect("in-memory write");
    }
    std::fs::write(path, out).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

pub fn read_dataset(path: &Path) -> Result<Dataset, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::validation(format!("{}: empty file", path.display())))?;
    let cols: Vec<&str> = header.trim_end_matches('\r').split(',').collect();
    if cols.first() != Some(&"y") {
        return Err(CliError::validation(format!(
            "{}: first column must be 'y', found {:?}",
            path.display(),
            cols.first()
        )));
    }
    let p = cols.len() - 1;
    for (j, name) in cols.iter().enumerate().skip(1) {
        let expected = format!("x{j}");
        if *name != expected {
            return Err(CliError::validation(format!(
                "{}: column {j} must be '{expected}', found '{name}'",
                path.display()
            )));
        }
    }
    if p == 0 {
        return Err(CliError::validation(format!(
            "{}: need at least one covariate column",
            path.display()
        )));
    }
    let mut y = Vec::new();
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != p + 1 {
            return Err(CliError::validation(format!(
                "{}: row {} has {} fields, expected {}",
                path.display(),
                lineno + 2,
                fields.len(),
                p + 1
            )));
        }
        let parse = |s: &str| -> Result<f64, CliError> {
            s.parse::<f64>().map_err(|_| {
                CliError::validation(format!(
                    "{}: row {}: cannot parse '{s}' as a number",
                    path.display(),
                    lineno + 2
                ))
            })
        };
        y.push(parse(fields[0])?);
        let row: Vec<f64> = fields[1..].iter().map(|s| parse(s)).collect::<Result<_, _>>()?;
        rows.push(row);
    }
    Dataset::from_rows(&y, &rows).map_err(CliError::from)
}

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct ResidualSummary {
    pub min_abs: f64,
    pub q_abs: f64,
    pub median_abs: f64,
    pub max_abs: f64,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct BoundsOut {
    pub upper: f64,
    pub lower: f64,
    pub gap: f64,
}

/// The result document every solving subcommand writes.
#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct ResultDoc {
    pub schema_version: u32,
    pub algo: String,
    pub config: serde_json::Value,
    pub beta: Vec<f64>,
    pub objective: f64,
    pub residual_summary: ResidualSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsOut>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub status: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nodes: Option<u64>,
    pub wall_time_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_time_s: Option<f64>,
    pub seed: u64,
}

impl ResultDoc {
    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::numerical(format!("serializing result: {e}")))?;
        text.push('\n');
        std::fs::write(path, text)
            .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
    }

    pub fn read(path: &Path) -> Result<ResultDoc, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        let doc: ResultDoc = serde_json::from_str(&text)
            .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        if doc.schema_version != SCHEMA_VERSION {
            return Err(CliError::validation(format!(
                "{}: schema_version {} unsupported (expected {SCHEMA_VERSION})",
                path.display(),
                doc.schema_version
            )));
        }
        Ok(doc)
    }

    /// Coefficients as a vector, validated against an expected length.
    pub fn beta_vector(&self, expected_len: usize) -> Result<DVector<f64>, CliError> {
        if self.beta.len() != expected_len {
            return Err(CliError::validation(format!(
                "result has {} coefficients, expected {expected_len}",
                self.beta.len()
            )));
        }
        Ok(DVector::from_column_slice(&self.beta))
    }
}

pub fn residual_summary(data: &Dataset, beta: &DVector<f64>, q: usize) -> ResidualSummary {
    let mut abs: Vec<f64> = data.residuals(beta).iter().map(|r| r.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let n = abs.len();
    ResidualSummary {
        min_abs: abs[0],
        q_abs: abs[q - 1],
        median_abs: abs[(n - 1) / 2],
        max_abs: abs[n - 1],
    }
}
