use serde::{Deserialize, Serialize};
use std::ops::Range;

use super::{DataError, PersonPeriodTable};
use crate::linalg::RowMatrix;
use crate::splines::{build_basis, recenter, CenteredBasis, DEFAULT_QUADRATURE_POINTS};

/// Prior precision given to linear coefficients when none is supplied.
pub const DEFAULT_LINEAR_PRECISION: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Submodel {
    /// Long-term survival, `η_θ`.
    Quantum,
    /// Short-term survival, `η_F`.
    Timing,
}

/// Gaussian prior `N(mean, precision⁻¹)` on the linear coefficients of one submodel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPrior {
    pub mean: Vec<f64>,
    /// Row-major square precision matrix.
    pub precision: Vec<Vec<f64>>,
}

impl LinearPrior {
    pub fn weak(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            precision: (0..dim)
                .map(|i| {
                    (0..dim)
                        .map(|j| if i == j { DEFAULT_LINEAR_PRECISION } else { 0.0 })
                        .collect()
                })
                .collect(),
        }
    }

    fn check(&self, dim: usize, which: &str) -> Result<(), DataError> {
        let square = self.precision.len() == dim && self.precision.iter().all(|r| r.len() == dim);
        if self.mean.len() != dim || !square {
            return Err(DataError::Spec(format!(
                "{which} prior must have dimension {dim}"
            )));
        }
        Ok(())
    }
}

/// Which covariates enter each submodel, and how.
///
/// The quantum submodel always carries an intercept; the timing submodel never does.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub quantum_linear: Vec<String>,
    pub quantum_additive: Vec<String>,
    pub timing_linear: Vec<String>,
    pub timing_additive: Vec<String>,
    /// `K`, number of B-splines for the baseline density.
    pub baseline_basis_size: usize,
    /// `L + 1`, number of B-splines per additive term before recentering.
    pub additive_basis_size: usize,
    pub penalty_order: usize,
    /// Prior on `β` (intercept first); weakly informative when absent.
    pub quantum_prior: Option<LinearPrior>,
    /// Prior on `γ`; weakly informative when absent.
    pub timing_prior: Option<LinearPrior>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            quantum_linear: Vec::new(),
            quantum_additive: Vec::new(),
            timing_linear: Vec::new(),
            timing_additive: Vec::new(),
            baseline_basis_size: 10,
            additive_basis_size: 10,
            penalty_order: 2,
            quantum_prior: None,
            timing_prior: None,
        }
    }
}

impl ModelSpec {
    /// Distinct covariate names in declaration order.
    pub fn covariate_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for n in self
            .quantum_linear
            .iter()
            .chain(&self.quantum_additive)
            .chain(&self.timing_linear)
            .chain(&self.timing_additive)
        {
            if !names.contains(n) {
                names.push(n.clone());
            }
        }
        names
    }

    /// `L`, the number of centered columns per additive term.
    pub fn additive_dim(&self) -> usize {
        self.additive_basis_size.saturating_sub(1)
    }

    pub fn quantum_prior(&self) -> LinearPrior {
        self.quantum_prior
            .clone()
            .unwrap_or_else(|| LinearPrior::weak(1 + self.quantum_linear.len()))
    }

    pub fn timing_prior(&self) -> LinearPrior {
        self.timing_prior
            .clone()
            .unwrap_or_else(|| LinearPrior::weak(self.timing_linear.len()))
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let order = self.penalty_order;
        if order == 0 {
            return Err(DataError::Spec("penalty order must be at least 1".into()));
        }
        if self.baseline_basis_size < 4 || self.baseline_basis_size <= order {
            return Err(DataError::Spec(format!(
                "baseline basis size {} too small for cubic splines with order-{order} penalty",
                self.baseline_basis_size
            )));
        }
        let has_additive = !self.quantum_additive.is_empty() || !self.timing_additive.is_empty();
        if has_additive && (self.additive_basis_size < 4 || self.additive_dim() <= order) {
            return Err(DataError::Spec(format!(
                "additive basis size {} too small for cubic splines with order-{order} penalty",
                self.additive_basis_size
            )));
        }
        for (list, which) in [
            (&self.quantum_linear, "quantum linear"),
            (&self.quantum_additive, "quantum additive"),
            (&self.timing_linear, "timing linear"),
            (&self.timing_additive, "timing additive"),
        ] {
            for (i, n) in list.iter().enumerate() {
                if list[..i].contains(n) {
                    return Err(DataError::Spec(format!("{which} term `{n}` listed twice")));
                }
            }
        }
        for n in &self.quantum_linear {
            if self.quantum_additive.contains(n) {
                return Err(DataError::Spec(format!(
                    "`{n}` is both linear and additive in the quantum submodel"
                )));
            }
        }
        for n in &self.timing_linear {
            if self.timing_additive.contains(n) {
                return Err(DataError::Spec(format!(
                    "`{n}` is both linear and additive in the timing submodel"
                )));
            }
        }
        self.quantum_prior()
            .check(1 + self.quantum_linear.len(), "quantum")?;
        self.timing_prior().check(self.timing_linear.len(), "timing")?;
        Ok(())
    }
}

/// One smooth term with its recentered basis and coefficient block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveTerm {
    pub covariate: String,
    pub submodel: Submodel,
    pub basis: CenteredBasis,
    /// Offset of `θ_j` inside `ψ` (quantum) or `ψ̃` (timing).
    pub offset: usize,
}

impl AdditiveTerm {
    pub fn coefficients(&self) -> Range<usize> {
        self.offset..self.offset + self.basis.n_effective
    }

    /// Short label such as `quantum:x1`.
    pub fn label(&self) -> String {
        let prefix = match self.submodel {
            Submodel::Quantum => "quantum",
            Submodel::Timing => "timing",
        };
        format!("{prefix}:{}", self.covariate)
    }
}

/// Column layout of `𝒳_t = [Z | S_1 .. S_J]` and `𝒳̃_t = [Z̃ | S̃_1 .. S̃_J̃]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignLayout {
    pub spec: ModelSpec,
    pub quantum_terms: Vec<AdditiveTerm>,
    pub timing_terms: Vec<AdditiveTerm>,
}

impl DesignLayout {
    /// Builds one recentered basis per additive covariate on its observed range.
    pub fn from_table(table: &PersonPeriodTable, spec: &ModelSpec) -> Result<Self, DataError> {
        spec.validate()?;
        for name in spec.covariate_names() {
            if table.covariate(&name).is_none() {
                return Err(DataError::MissingColumn(name));
            }
        }
        let range = |name: &str| {
            let col = table.covariate(name).unwrap();
            col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(*v), hi.max(*v))
            })
        };
        let domains = |names: &[String]| -> Vec<(String, f64, f64)> {
            names
                .iter()
                .map(|n| {
                    let (lo, hi) = range(n);
                    (n.clone(), lo, hi)
                })
                .collect()
        };
        Self::with_domains(
            spec,
            &domains(&spec.quantum_additive),
            &domains(&spec.timing_additive),
        )
    }

    /// Builds the layout from explicit `(covariate, lo, hi)` domains.
    pub fn with_domains(
        spec: &ModelSpec,
        quantum: &[(String, f64, f64)],
        timing: &[(String, f64, f64)],
    ) -> Result<Self, DataError> {
        spec.validate()?;
        let l = spec.additive_dim();
        let make = |doms: &[(String, f64, f64)], submodel: Submodel, first: usize| {
            doms.iter()
                .enumerate()
                .map(|(j, (name, lo, hi))| {
                    let basis = build_basis(*lo, *hi, spec.additive_basis_size, 3)?;
                    Ok(AdditiveTerm {
                        covariate: name.clone(),
                        submodel,
                        basis: recenter(basis, DEFAULT_QUADRATURE_POINTS)?,
                        offset: first + j * l,
                    })
                })
                .collect::<Result<Vec<_>, DataError>>()
        };
        Ok(Self {
            spec: spec.clone(),
            quantum_terms: make(quantum, Submodel::Quantum, 1 + spec.quantum_linear.len())?,
            timing_terms: make(timing, Submodel::Timing, spec.timing_linear.len())?,
        })
    }

    /// `q = 1 + p + J·L`
    pub fn q(&self) -> usize {
        1 + self.spec.quantum_linear.len() + self.quantum_terms.len() * self.spec.additive_dim()
    }

    /// `q̃ = p̃ + J̃·L`
    pub fn q_tilde(&self) -> usize {
        self.spec.timing_linear.len() + self.timing_terms.len() * self.spec.additive_dim()
    }

    pub fn n_linear(&self) -> usize {
        1 + self.spec.quantum_linear.len() + self.spec.timing_linear.len()
    }

    /// All additive terms, quantum first, with their offsets inside `ζ = (ψ, ψ̃)`.
    pub fn terms_in_zeta(&self) -> Vec<(&AdditiveTerm, Range<usize>)> {
        let q = self.q();
        self.quantum_terms
            .iter()
            .map(|t| (t, t.coefficients()))
            .chain(self.timing_terms.iter().map(move |t| {
                let r = t.coefficients();
                (t, r.start + q..r.end + q)
            }))
            .collect()
    }

    pub fn term(&self, label: &str) -> Option<&AdditiveTerm> {
        self.quantum_terms
            .iter()
            .chain(&self.timing_terms)
            .find(|t| t.label() == label || t.covariate == label)
    }

    /// Names of the entries of `ζ`.
    pub fn coefficient_names(&self) -> Vec<String> {
        let l = self.spec.additive_dim();
        let mut names = vec!["quantum:(intercept)".to_string()];
        names.extend(self.spec.quantum_linear.iter().map(|n| format!("quantum:{n}")));
        for t in &self.quantum_terms {
            names.extend((1..=l).map(|k| format!("{}[{k}]", t.label())));
        }
        names.extend(self.spec.timing_linear.iter().map(|n| format!("timing:{n}")));
        for t in &self.timing_terms {
            names.extend((1..=l).map(|k| format!("{}[{k}]", t.label())));
        }
        names
    }

    /// Fills one row of `𝒳_t` from covariate values looked up by name.
    pub fn quantum_row(&self, value: impl Fn(&str) -> f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.q());
        out[0] = 1.0;
        for (k, n) in self.spec.quantum_linear.iter().enumerate() {
            out[1 + k] = value(n);
        }
        for t in &self.quantum_terms {
            t.basis
                .eval_into(value(&t.covariate), &mut out[t.coefficients()]);
        }
    }

    /// Fills one row of `𝒳̃_t`.
    pub fn timing_row(&self, value: impl Fn(&str) -> f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.q_tilde());
        for (k, n) in self.spec.timing_linear.iter().enumerate() {
            out[k] = value(n);
        }
        for t in &self.timing_terms {
            t.basis
                .eval_into(value(&t.covariate), &mut out[t.coefficients()]);
        }
    }
}

/// Design rows for a table.
///
/// Consecutive months of a unit with identical covariate values share one
/// stored row ("profile"); `profile_start` delimits the table rows of each profile.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignViews {
    pub quantum: RowMatrix,
    pub timing: RowMatrix,
    pub profile_start: Vec<usize>,
}

impl DesignViews {
    pub fn q(&self) -> usize {
        self.quantum.ncols()
    }

    pub fn q_tilde(&self) -> usize {
        self.timing.ncols()
    }

    pub fn n_profiles(&self) -> usize {
        self.profile_start.len() - 1
    }

    pub fn profile_rows(&self, p: usize) -> Range<usize> {
        self.profile_start[p]..self.profile_start[p + 1]
    }

    /// Profile holding table row `r`.
    pub fn profile_of(&self, r: usize) -> usize {
        self.profile_start.partition_point(|s| *s <= r) - 1
    }

    /// Row of `𝒳_t` for table row `r`.
    pub fn quantum_row(&self, r: usize) -> &[f64] {
        self.quantum.row(self.profile_of(r))
    }

    /// Row of `𝒳̃_t` for table row `r`.
    pub fn timing_row(&self, r: usize) -> &[f64] {
        self.timing.row(self.profile_of(r))
    }
}

pub fn build_design(table: &PersonPeriodTable, layout: &DesignLayout) -> Result<DesignViews, DataError> {
    let names = layout.spec.covariate_names();
    let mut columns = Vec::with_capacity(names.len());
    for n in &names {
        columns.push(
            table
                .covariate(n)
                .ok_or_else(|| DataError::MissingColumn(n.clone()))?,
        );
    }

    let mut profile_start = vec![0usize];
    for unit in 0..table.n_units() {
        let rows = table.unit_rows(unit);
        for r in rows.start + 1..rows.end {
            if columns.iter().any(|c| c[r] != c[r - 1]) {
                profile_start.push(r);
            }
        }
        profile_start.push(rows.end);
    }
    profile_start.dedup();

    let n_profiles = profile_start.len() - 1;
    let (q, qt) = (layout.q(), layout.q_tilde());
    let mut quantum = RowMatrix::zeros(n_profiles, q);
    let mut timing = RowMatrix::zeros(n_profiles, qt);
    for p in 0..n_profiles {
        let r = profile_start[p];
        let value = |name: &str| {
            let idx = names.iter().position(|n| n == name).unwrap();
            columns[idx][r]
        };
        layout.quantum_row(value, quantum.row_mut(p));
        layout.timing_row(value, timing.row_mut(p));
    }
    Ok(DesignViews {
        quantum,
        timing,
        profile_start,
    })
}
