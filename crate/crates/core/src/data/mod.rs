//! Person-period data: expansion of classical survival records, CSV
//! ingestion and time-indexed design matrices for both submodels.

mod design;
mod ingest;

pub use design::{
    build_design, AdditiveTerm, DesignLayout, DesignViews, LinearPrior, ModelSpec, Submodel,
};
pub use ingest::{ingest_csv, ingest_reader, write_csv};

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::ops::Range;
use thiserror::Error;

use crate::splines::SplineError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("unit {unit}: follow-up must be at least one period")]
    ZeroFollowup { unit: String },
    #[error("unit {unit}: covariate {covariate} has {found} monthly values, expected {expected}")]
    PathLength {
        unit: String,
        covariate: String,
        expected: usize,
        found: usize,
    },
    #[error("unit {unit}: covariate {covariate} is missing")]
    MissingCovariate { unit: String, covariate: String },
    #[error("unit {unit}: covariate {covariate} is not declared by the first record")]
    UnexpectedCovariate { unit: String, covariate: String },
    #[error("unit {unit}: covariate {covariate} has a non-finite value")]
    NonFiniteCovariate { unit: String, covariate: String },
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: event indicator must be 0 or 1, found `{value}`")]
    InvalidEvent { line: usize, value: String },
    #[error("line {line}: month must be a positive integer, found `{value}`")]
    InvalidMonth { line: usize, value: String },
    #[error("line {line}: column `{column}` is not a finite number: `{value}`")]
    NonNumeric {
        line: usize,
        column: String,
        value: String,
    },
    #[error("unit {unit}: months are not consecutive from 1 (expected {expected}, found {found} at line {line})")]
    NonConsecutiveMonths {
        unit: String,
        expected: u32,
        found: u32,
        line: usize,
    },
    #[error("unit {unit}: event flagged at month {month} before the end of follow-up (line {line})")]
    EventBeforeEnd { unit: String, month: u32, line: usize },
    #[error("line {line}: malformed CSV record: {message}")]
    Malformed { line: usize, message: String },
    #[error("I/O error: {0}")]
    Io(String),
    #[error("model specification: {0}")]
    Spec(String),
    #[error(transparent)]
    Spline(#[from] SplineError),
}

/// Values of one covariate over a unit's follow-up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovariatePath {
    Constant(f64),
    /// One value per month `t = 1..=t_i`.
    Monthly(Vec<f64>),
}

impl CovariatePath {
    fn value(&self, month_index: usize) -> f64 {
        match self {
            CovariatePath::Constant(v) => *v,
            CovariatePath::Monthly(vs) => vs[month_index],
        }
    }

    /// Value in one-based `month`, if the path reaches it.
    pub fn at(&self, month: u32) -> Option<f64> {
        match self {
            CovariatePath::Constant(v) => Some(*v),
            CovariatePath::Monthly(vs) => month
                .checked_sub(1)
                .and_then(|i| vs.get(i as usize).copied()),
        }
    }
}

/// One unit in the classical `(t_i, δ_i, covariates)` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalRecord {
    pub unit_id: String,
    pub followup: u32,
    pub event: bool,
    pub covariates: BTreeMap<String, CovariatePath>,
}

/// Long layout with one row per unit and month.
///
/// Rows are stored unit by unit, months increasing from 1 within a unit.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonPeriodTable {
    unit_ids: Vec<String>,
    unit_start: Vec<usize>,
    months: Vec<u32>,
    events: Vec<u8>,
    covariates: BTreeMap<String, Vec<f64>>,
    dt: f64,
}

impl PersonPeriodTable {
    pub fn n_rows(&self) -> usize {
        self.months.len()
    }

    pub fn n_units(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Largest observed month `T`.
    pub fn max_month(&self) -> u32 {
        self.months.iter().copied().max().unwrap_or(0)
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn unit_rows(&self, unit: usize) -> Range<usize> {
        self.unit_start[unit]..self.unit_start[unit + 1]
    }

    pub fn months(&self) -> &[u32] {
        &self.months
    }

    pub fn events(&self) -> &[u8] {
        &self.events
    }

    pub fn covariate(&self, name: &str) -> Option<&[f64]> {
        self.covariates.get(name).map(Vec::as_slice)
    }

    pub fn covariate_names(&self) -> impl Iterator<Item = &str> {
        self.covariates.keys().map(String::as_str)
    }

    /// Recovers `(unit_id, t_i, δ_i)` for every unit.
    pub fn collapse(&self) -> Vec<(String, u32, bool)> {
        (0..self.n_units())
            .map(|u| {
                let last = self.unit_rows(u).end - 1;
                (
                    self.unit_ids[u].clone(),
                    self.months[last],
                    self.events[last] == 1,
                )
            })
            .collect()
    }

    /// Copy of the table with the time step replaced.
    pub fn with_dt(&self, dt: f64) -> Result<Self, DataError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(DataError::NonPositiveStep(dt));
        }
        Ok(Self {
            dt,
            ..self.clone()
        })
    }

    /// Concatenates the units of several tables sharing covariate names and time step.
    pub fn concat(tables: &[&PersonPeriodTable]) -> Result<Self, DataError> {
        let first = tables
            .first()
            .ok_or_else(|| DataError::Spec("no tables to concatenate".into()))?;
        let mut out = PersonPeriodTable {
            unit_ids: Vec::new(),
            unit_start: vec![0],
            months: Vec::new(),
            events: Vec::new(),
            covariates: first
                .covariates
                .keys()
                .map(|k| (k.clone(), Vec::new()))
                .collect(),
            dt: first.dt,
        };
        for table in tables {
            for (name, column) in out.covariates.iter_mut() {
                let src = table.covariate(name).ok_or_else(|| DataError::MissingCovariate {
                    unit: "*".into(),
                    covariate: name.clone(),
                })?;
                column.extend_from_slice(src);
            }
            let offset = out.months.len();
            out.unit_ids.extend(table.unit_ids.iter().cloned());
            out.unit_start
                .extend(table.unit_start[1..].iter().map(|s| s + offset));
            out.months.extend_from_slice(&table.months);
            out.events.extend_from_slice(&table.events);
        }
        Ok(out)
    }
}

/// Expands classical survival records into person-period rows.
pub fn expand(records: &[SurvivalRecord], dt: f64) -> Result<PersonPeriodTable, DataError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(DataError::NonPositiveStep(dt));
    }
    let names: Vec<String> = records
        .first()
        .map(|r| r.covariates.keys().cloned().collect())
        .unwrap_or_default();
    let total: usize = records.iter().map(|r| r.followup as usize).sum();

    let mut table = PersonPeriodTable {
        unit_ids: Vec::with_capacity(records.len()),
        unit_start: Vec::with_capacity(records.len() + 1),
        months: Vec::with_capacity(total),
        events: Vec::with_capacity(total),
        covariates: names
            .iter()
            .map(|n| (n.clone(), Vec::with_capacity(total)))
            .collect(),
        dt,
    };
    table.unit_start.push(0);

    for record in records {
        validate_record(record, &names)?;
        let t_i = record.followup;
        for t in 1..=t_i {
            table.months.push(t);
            table
                .events
                .push(u8::from(record.event && t == t_i));
        }
        for (name, column) in table.covariates.iter_mut() {
            let path = &record.covariates[name];
            column.extend((0..t_i as usize).map(|m| path.value(m)));
        }
        table.unit_ids.push(record.unit_id.clone());
        table.unit_start.push(table.months.len());
    }
    Ok(table)
}

fn validate_record(record: &SurvivalRecord, names: &[String]) -> Result<(), DataError> {
    if record.followup == 0 {
        return Err(DataError::ZeroFollowup {
            unit: record.unit_id.clone(),
        });
    }
    for name in names {
        let path = record
            .covariates
            .get(name)
            .ok_or_else(|| DataError::MissingCovariate {
                unit: record.unit_id.clone(),
                covariate: name.clone(),
            })?;
        let finite = match path {
            CovariatePath::Constant(v) => v.is_finite(),
            CovariatePath::Monthly(vs) => {
                if vs.len() != record.followup as usize {
                    return Err(DataError::PathLength {
                        unit: record.unit_id.clone(),
                        covariate: name.clone(),
                        expected: record.followup as usize,
                        found: vs.len(),
                    });
                }
                vs.iter().all(|v| v.is_finite())
            }
        };
        if !finite {
            return Err(DataError::NonFiniteCovariate {
                unit: record.unit_id.clone(),
                covariate: name.clone(),
            });
        }
    }
    if let Some(extra) = record.covariates.keys().find(|k| !names.contains(k)) {
        return Err(DataError::UnexpectedCovariate {
            unit: record.unit_id.clone(),
            covariate: extra.clone(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn record(id: &str, t: u32, event: bool, x: f64) -> SurvivalRecord {
        SurvivalRecord {
            unit_id: id.into(),
            followup: t,
            event,
            covariates: BTreeMap::from([("x".to_string(), CovariatePath::Constant(x))]),
        }
    }

    #[test]
    fn minimal_record_gives_one_event_row() {
        let table = expand(&[record("a", 1, true, 0.0)], 1.0).unwrap();
        assert_eq!(table.n_rows(), 1);
        assert_eq!(table.events(), &[1]);
    }

    #[test]
    fn censored_unit_has_no_events() {
        let table = expand(&[record("a", 5, false, 0.0)], 1.0).unwrap();
        assert_eq!(table.months(), &[1, 2, 3, 4, 5]);
        assert!(table.events().iter().all(|d| *d == 0));
    }

    #[test]
    fn row_count_is_total_follow_up() {
        let recs = [
            record("a", 2, true, 0.1),
            record("b", 3, false, 0.2),
            record("c", 4, true, 0.3),
        ];
        let table = expand(&recs, 1.0).unwrap();
        assert_eq!(table.n_rows(), 9);
        assert_eq!(table.n_units(), 3);
        assert_eq!(table.max_month(), 4);
        assert_eq!(table.events(), &[0, 1, 0, 0, 0, 0, 0, 0, 1]);
    }

    #[test]
    fn monthly_paths_are_laid_out_per_row() {
        let mut r = record("a", 3, true, 0.0);
        r.covariates
            .insert("x".into(), CovariatePath::Monthly(vec![1.0, 2.0, 3.0]));
        let table = expand(&[r], 1.0).unwrap();
        assert_eq!(table.covariate("x").unwrap(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn rejects_invalid_records() {
        let mut r = record("a", 3, true, 0.0);
        r.covariates
            .insert("x".into(), CovariatePath::Monthly(vec![1.0, 2.0]));
        assert!(matches!(
            expand(&[r], 1.0),
            Err(DataError::PathLength { expected: 3, found: 2, .. })
        ));
        assert!(matches!(
            expand(&[record("z", 0, false, 0.0)], 1.0),
            Err(DataError::ZeroFollowup { .. })
        ));
        assert!(matches!(
            expand(&[record("a", 2, false, 0.0)], 0.0),
            Err(DataError::NonPositiveStep(_))
        ));
    }

    #[test]
    fn concat_keeps_units_apart() {
        let a = expand(&[record("a", 2, true, 0.1)], 1.0).unwrap();
        let b = expand(&[record("b", 3, false, 0.2)], 1.0).unwrap();
        let both = PersonPeriodTable::concat(&[&a, &b]).unwrap();
        assert_eq!(both.n_units(), 2);
        assert_eq!(both.unit_rows(1), 2..5);
        assert_eq!(both.covariate("x").unwrap(), &[0.1, 0.1, 0.2, 0.2, 0.2]);
    }

    proptest! {
        #[test]
        fn expansion_is_invertible(units in proptest::collection::vec((1u32..40, any::<bool>()), 1..30)) {
            let recs: Vec<_> = units
                .iter()
                .enumerate()
                .map(|(i, (t, d))| record(&format!("u{i}"), *t, *d, i as f64))
                .collect();
            let table = expand(&recs, 1.0).unwrap();
            let total: u32 = units.iter().map(|(t, _)| t).sum();
            prop_assert_eq!(table.n_rows(), total as usize);
            let back = table.collapse();
            for (rec, (id, t, d)) in recs.iter().zip(back) {
                prop_assert_eq!(&rec.unit_id, &id);
                prop_assert_eq!(rec.followup, t);
                prop_assert_eq!(rec.event, d);
            }
        }
    }
}
