//! The JSON fit artifact and the curve CSVs.

use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

use tvcure::estimation::{BaselineCurve, Diagnostics, TermCurve};
use tvcure::{FitResult, FitStatistics, PenaltyState, PredictionRow};

use crate::config::SCHEMA_VERSION;
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
}

/// Summary fields up front, the full result underneath for `predict`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitArtifact {
    pub schema_version: u32,
    pub coefficients: Vec<Coefficient>,
    pub penalties: PenaltyState,
    pub statistics: FitStatistics,
    pub diagnostics: Diagnostics,
    pub result: FitResult,
}

impl FitArtifact {
    pub fn new(fit: FitResult) -> Self {
        let coefficients = fit
            .coefficient_names
            .iter()
            .zip(fit.zeta())
            .zip(fit.standard_errors())
            .map(|((name, estimate), std_error)| Coefficient {
                name: name.clone(),
                estimate,
                std_error,
            })
            .collect();
        Self {
            schema_version: SCHEMA_VERSION,
            coefficients,
            penalties: fit.penalties.clone(),
            statistics: fit.statistics.clone(),
            diagnostics: fit.diagnostics.clone(),
            result: fit,
        }
    }

    pub fn to_json(&self) -> Result<String, CliError> {
        serde_json::to_string_pretty(self).map_err(|e| CliError::Validation(format!("serializing fit: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let artifact: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: not a fit artifact: {e}", path.display())))?;
        if artifact.schema_version != SCHEMA_VERSION {
            return Err(CliError::Validation(format!(
                "{}: schema_version {} is not supported",
                path.display(),
                artifact.schema_version
            )));
        }
        Ok(artifact)
    }
}

fn csv_error(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::io(path, e)
}

fn number(v: f64) -> String {
    // shortest representation that round-trips
    format!("{v:?}")
}

fn write_rows<W: Write>(
    w: W,
    path: &Path,
    header: &[&str],
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<(), CliError> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(header).map_err(csv_error(path))?;
    for r in rows {
        csv.write_record(&r).map_err(csv_error(path))?;
    }
    csv.flush().map_err(|e| CliError::io(path, e))
}

fn create(path: &Path) -> Result<std::fs::File, CliError> {
    std::fs::File::create(path).map_err(|e| CliError::io(path, e))
}

pub fn write_baseline(curve: &BaselineCurve, path: &Path) -> Result<(), CliError> {
    let rows = (0..curve.t.len()).map(|i| {
        vec![
            curve.t[i].to_string(),
            number(curve.density[i]),
            number(curve.cdf[i]),
            number(curve.survivor[i]),
        ]
    });
    write_rows(create(path)?, path, &["t", "f0", "F0", "S0"], rows)
}

pub fn write_term(term: &TermCurve, path: &Path) -> Result<(), CliError> {
    let rows = term
        .points
        .iter()
        .map(|p| vec![number(p.x), number(p.estimate), number(p.lower), number(p.upper)]);
    write_rows(create(path)?, path, &["x", "estimate", "lower", "upper"], rows)
}

/// `term_quantum_x1.csv` for the term labelled `quantum:x1`.
pub fn term_file_name(term: &TermCurve) -> String {
    let clean: String = term
        .label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect();
    format!("term_{clean}.csv")
}

pub fn write_prediction(rows: &[PredictionRow], path: &Path) -> Result<(), CliError> {
    let body = rows.iter().map(|r| {
        vec![
            r.t.to_string(),
            number(r.hazard),
            number(r.cumulative_hazard),
            number(r.survival),
            number(r.cdf),
        ]
    });
    write_rows(create(path)?, path, &["t", "h", "H", "S", "F"], body)
}
