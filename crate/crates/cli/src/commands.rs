use std::fs;
use std::io::BufWriter;
use std::path::Path;

use tvcure::data::{ingest_csv, write_csv};
use tvcure::simulate::{write_parameter_table, write_replicate_estimates, write_term_table};
use tvcure::{generate_table, EstimationError, ReplicationSummary};

use crate::artifact::{term_file_name, write_baseline, write_prediction, write_term, FitArtifact};
use crate::config::{PathDocument, ScenarioDocument, SpecDocument, SCHEMA_VERSION};
use crate::CliError;

pub const FIT_FILE: &str = "fit.json";
pub const FAILURE_FILE: &str = "failure.json";
pub const BASELINE_FILE: &str = "baseline.csv";
pub const PARAMETER_TABLE: &str = "parameters.csv";
pub const TERM_TABLE: &str = "terms.csv";
pub const REPLICATE_TABLE: &str = "replicates.csv";

/// Largest share of failed replicates accepted without an error exit.
const MAX_FAILED_SHARE: f64 = 0.10;

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn ensure_parent(file: &Path) -> Result<(), CliError> {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => ensure_dir(p),
        _ => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_failure(out: &Path, error: &EstimationError) -> Result<(), CliError> {
    let doc = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "error": error.to_string(),
    });
    write_text(&out.join(FAILURE_FILE), &format!("{doc:#}"))
}

pub fn fit(data: &Path, spec: &Path, out: &Path) -> Result<(), CliError> {
    let doc = SpecDocument::load(spec)?;
    let table = ingest_csv(data, &doc.model)?;
    log::info!("{} units, {} person-period rows", table.n_units(), table.n_rows());
    ensure_dir(out)?;
    let result = match tvcure::fit(&table, &doc.model, &doc.fit) {
        Ok(r) => r,
        Err(e) => {
            if e.is_numerical() {
                write_failure(out, &e)?;
            }
            return Err(e.into());
        }
    };
    for term in &result.terms {
        write_term(term, &out.join(term_file_name(term)))?;
    }
    write_baseline(&result.baseline_curve, &out.join(BASELINE_FILE))?;
    let converged = result.diagnostics.converged;
    let outer = result.diagnostics.outer_iterations;
    let artifact = FitArtifact::new(result);
    write_text(&out.join(FIT_FILE), &artifact.to_json()?)?;
    if !converged {
        return Err(CliError::NotConverged {
            outer,
            out: out.to_path_buf(),
        });
    }
    Ok(())
}

pub fn simulate(scenario: &Path, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let mut doc = ScenarioDocument::load(scenario)?;
    if let Some(s) = seed {
        doc.scenario.seed = s;
    }
    let table = generate_table(&doc.scenario, 0)?;
    ensure_parent(out)?;
    let file = fs::File::create(out).map_err(|e| CliError::io(out, e))?;
    write_csv(&table, BufWriter::new(file))?;
    log::info!("wrote {} units to {}", table.n_units(), out.display());
    Ok(())
}

pub fn write_summary(summary: &ReplicationSummary, out: &Path) -> Result<(), CliError> {
    ensure_dir(out)?;
    let open = |name: &str| {
        let p = out.join(name);
        fs::File::create(&p).map(BufWriter::new).map_err(|e| CliError::io(&p, e))
    };
    write_parameter_table(summary, open(PARAMETER_TABLE)?)?;
    write_term_table(summary, open(TERM_TABLE)?)?;
    write_replicate_estimates(summary, open(REPLICATE_TABLE)?)?;
    Ok(())
}

pub fn replicate(scenario: &Path, out: &Path, seed: Option<u64>, threads: Option<usize>) -> Result<(), CliError> {
    let mut doc = ScenarioDocument::load(scenario)?;
    if let Some(s) = seed {
        doc.scenario.seed = s;
    }
    if threads == Some(0) {
        return Err(CliError::Validation("--threads must be at least 1".into()));
    }
    let summary = tvcure::replicate(&doc.scenario, &doc.fit, threads)?;
    write_summary(&summary, out)?;
    log::info!(
        "{} of {} replicates used, {} failed",
        summary.used,
        summary.replicates,
        summary.failed
    );
    if summary.failed as f64 > MAX_FAILED_SHARE * summary.replicates as f64 {
        return Err(CliError::TooManyFailures {
            failed: summary.failed,
            total: summary.replicates,
        });
    }
    Ok(())
}

pub fn predict(fit: &Path, path: &Path, out: &Path) -> Result<(), CliError> {
    let artifact = FitArtifact::load(fit)?;
    let request = PathDocument::load(path)?;
    let rows = tvcure::predict(&artifact.result, &request.covariates, request.horizon)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    ensure_parent(out)?;
    write_prediction(&rows, out)
}
