//! TOML documents read by the subcommands. Each carries `schema_version`.

use serde::de::DeserializeOwned;
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::Path;

use tvcure::{CovariatePath, FitConfig, ModelSpec, SimScenario};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// `--spec`: the model and optional fitting overrides.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecDocument {
    pub schema_version: u32,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub fit: FitConfig,
}

/// `--scenario`: simulation truth and study size.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDocument {
    pub schema_version: u32,
    #[serde(default)]
    pub scenario: SimScenario,
    #[serde(default)]
    pub fit: FitConfig,
}

/// `--path`: one covariate path per model covariate, a number for a
/// constant value or an array with one value per month.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathDocument {
    pub schema_version: u32,
    pub horizon: Option<u32>,
    pub covariates: BTreeMap<String, CovariatePath>,
}

trait Versioned {
    fn version(&self) -> u32;
}

impl Versioned for SpecDocument {
    fn version(&self) -> u32 {
        self.schema_version
    }
}

impl Versioned for ScenarioDocument {
    fn version(&self) -> u32 {
        self.schema_version
    }
}

impl Versioned for PathDocument {
    fn version(&self) -> u32 {
        self.schema_version
    }
}

fn load<T: DeserializeOwned + Versioned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse(&text).map_err(|e| match e {
        CliError::Validation(m) => CliError::Validation(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn parse<T: DeserializeOwned + Versioned>(text: &str) -> Result<T, CliError> {
    let doc: T = toml::from_str(text).map_err(|e| CliError::Validation(e.to_string()))?;
    if doc.version() != SCHEMA_VERSION {
        return Err(CliError::Validation(format!(
            "schema_version {} is not supported (expected {SCHEMA_VERSION})",
            doc.version()
        )));
    }
    Ok(doc)
}

impl SpecDocument {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let doc: Self = load(path)?;
        doc.model.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        doc.fit.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        Ok(doc)
    }
}

impl ScenarioDocument {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let doc: Self = load(path)?;
        doc.scenario.validate()?;
        doc.fit.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        Ok(doc)
    }
}

impl PathDocument {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let doc: Self = load(path)?;
        for (name, p) in &doc.covariates {
            if let CovariatePath::Monthly(v) = p {
                if v.is_empty() {
                    return Err(CliError::Validation(format!("path for `{name}` is empty")));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(CliError::Validation(format!("path for `{name}` has non-finite values")));
                }
            }
        }
        Ok(doc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_document_fills_defaults() {
        let doc: SpecDocument = parse(
            r#"
schema_version = 1
[model]
quantum_linear = ["z1"]
timing_additive = ["x1"]
[fit]
max_outer_iterations = 40
"#,
        )
        .unwrap();
        assert_eq!(doc.model.quantum_linear, vec!["z1"]);
        assert_eq!(doc.model.additive_basis_size, 10);
        assert_eq!(doc.fit.max_outer_iterations, 40);
        assert_eq!(doc.fit.score_tolerance, FitConfig::default().score_tolerance);
    }

    #[test]
    fn wrong_version_and_unknown_keys_are_rejected() {
        assert!(parse::<SpecDocument>("schema_version = 2").is_err());
        assert!(parse::<SpecDocument>("schema_version = 1\n[model]\nquantum = []").is_err());
        assert!(parse::<SpecDocument>("[model]").is_err());
    }

    #[test]
    fn path_document_accepts_constants_and_arrays() {
        let doc: PathDocument = parse(
            r#"
schema_version = 1
horizon = 3
[covariates]
z1 = 1
x1 = [0.1, 0.2, 0.3]
"#,
        )
        .unwrap();
        assert_eq!(doc.covariates["z1"], CovariatePath::Constant(1.0));
        assert_eq!(doc.covariates["x1"], CovariatePath::Monthly(vec![0.1, 0.2, 0.3]));
    }

    #[test]
    fn scenario_document_overrides_fields() {
        let doc: ScenarioDocument = parse(
            r#"
schema_version = 1
[scenario]
n = 200
replicates = 3
censoring = [120.0, 299.0]
"#,
        )
        .unwrap();
        assert_eq!(doc.scenario.n, 200);
        assert_eq!(doc.scenario.censoring, [120.0, 299.0]);
        assert_eq!(doc.scenario.weibull_shape, 2.65);
    }
}
