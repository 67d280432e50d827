use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::{penalty_stationarity, tau0_stationarity, EstimationError, FitConfig};
use crate::data::{AdditiveTerm, CovariatePath, DesignLayout, PersonPeriodTable, Submodel};
use crate::linalg::{dot, sup_norm, trace_of_product};
use crate::model::{
    derivatives_phi, derivatives_zeta, BaselineBasis, BaselineSpec, BaselineState, DerivativeBundle,
    Discretization, ModelFrame, PenaltyState, RegressionState,
};

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959963984540054;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitStatistics {
    pub loglik: f64,
    pub penalized_loglik: f64,
    pub deviance: f64,
    pub edf: f64,
    pub aic: f64,
    pub n_units: usize,
    pub n_rows: usize,
    pub n_events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineCurve {
    pub t: Vec<u32>,
    /// `f₀(t) = π_t/dt`
    pub density: Vec<f64>,
    pub cdf: Vec<f64>,
    pub survivor: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandPoint {
    pub x: f64,
    pub estimate: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermCurve {
    pub label: String,
    pub covariate: String,
    pub submodel: Submodel,
    pub points: Vec<BandPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyResidual {
    pub name: String,
    pub value: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub converged: bool,
    pub outer_iterations: usize,
    pub newton_iterations_zeta: usize,
    pub newton_iterations_phi: usize,
    pub newton_iterations_joint: usize,
    pub penalty_updates: usize,
    pub tau0_updates: usize,
    pub score_norm_zeta: f64,
    /// Pinned coordinate removed.
    pub score_norm_phi: f64,
    pub stationarity: Vec<PenaltyResidual>,
}

pub(crate) struct IterationCounts {
    pub outer: usize,
    pub newton_zeta: usize,
    pub newton_phi: usize,
    pub newton_joint: usize,
    pub penalty_updates: usize,
    pub tau0_updates: usize,
    pub converged: bool,
}

impl Diagnostics {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn collect(
        frame: &ModelFrame,
        base: &BaselineState,
        reg: &RegressionState,
        pen: &PenaltyState,
        bundle: &DerivativeBundle,
        sigma: &DMatrix<f64>,
        cfg: &FitConfig,
        counts: IterationCounts,
    ) -> Result<Self, EstimationError> {
        let phi = derivatives_phi(frame, base, reg, pen.tau0)?;
        let mut stationarity = vec![PenaltyResidual {
            name: "baseline".into(),
            value: pen.tau0,
            residual: tau0_stationarity(frame, base, reg, pen, cfg.gamma_prior)?,
        }];
        let residuals = penalty_stationarity(frame, reg, sigma, pen, cfg.gamma_prior);
        for (((term, _), lambda), r) in frame.layout.terms_in_zeta().iter().zip(pen.tau()).zip(residuals) {
            stationarity.push(PenaltyResidual {
                name: term.label(),
                value: lambda,
                residual: r,
            });
        }
        Ok(Self {
            converged: counts.converged,
            outer_iterations: counts.outer,
            newton_iterations_zeta: counts.newton_zeta,
            newton_iterations_phi: counts.newton_phi,
            newton_iterations_joint: counts.newton_joint,
            penalty_updates: counts.penalty_updates,
            tau0_updates: counts.tau0_updates,
            score_norm_zeta: sup_norm(bundle.score.as_slice()),
            score_norm_phi: sup_norm(phi.reduced_score().as_slice()),
            stationarity,
        })
    }
}

/// Everything retained from a fit; serializes to the JSON fit artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub layout: DesignLayout,
    pub discretization: Discretization,
    pub dt: f64,
    pub baseline_spec: BaselineSpec,
    pub phi: Vec<f64>,
    pub regression: RegressionState,
    pub penalties: PenaltyState,
    pub coefficient_names: Vec<String>,
    /// `Σ_τ` over `ζ`, row-major.
    pub covariance: Vec<Vec<f64>>,
    pub statistics: FitStatistics,
    pub baseline_curve: BaselineCurve,
    pub terms: Vec<TermCurve>,
    pub diagnostics: Diagnostics,
}

impl FitResult {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn assemble(
        frame: &ModelFrame,
        base: BaselineState,
        reg: RegressionState,
        pen: PenaltyState,
        bundle: &DerivativeBundle,
        sigma: DMatrix<f64>,
        diagnostics: Diagnostics,
        cfg: &FitConfig,
    ) -> Result<Self, EstimationError> {
        let statistics = statistics_from(frame, &base, &reg, bundle, &sigma);
        let dt = frame.dt();
        let horizon = base.horizon() as u32;
        let baseline_curve = BaselineCurve {
            t: (1..=horizon).collect(),
            density: base.pi.iter().map(|p| p / dt).collect(),
            cdf: base.cdf[1..].to_vec(),
            survivor: base.survivor[1..].to_vec(),
        };
        let mut fit = Self {
            layout: frame.layout.clone(),
            discretization: frame.discretization,
            dt,
            baseline_spec: frame.baseline.spec,
            phi: base.phi.clone(),
            regression: reg,
            penalties: pen,
            coefficient_names: frame.layout.coefficient_names(),
            covariance: (0..sigma.nrows())
                .map(|i| sigma.row(i).iter().copied().collect())
                .collect(),
            statistics,
            baseline_curve,
            terms: Vec::new(),
            diagnostics,
        };
        let terms = fit
            .layout
            .quantum_terms
            .iter()
            .chain(&fit.layout.timing_terms)
            .map(|t| {
                let (lo, hi) = t.basis.domain();
                let n = cfg.curve_points;
                let grid: Vec<f64> = (0..n)
                    .map(|i| if n == 1 { lo } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
                    .collect();
                let points = credible_bands(&fit, &t.label(), &grid)?;
                Ok(TermCurve {
                    label: t.label(),
                    covariate: t.covariate.clone(),
                    submodel: t.submodel,
                    points,
                })
            })
            .collect::<Result<Vec<_>, EstimationError>>()?;
        fit.terms = terms;
        Ok(fit)
    }

    pub fn zeta(&self) -> Vec<f64> {
        self.regression.zeta()
    }

    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let n = self.covariance.len();
        DMatrix::from_fn(n, n, |i, j| self.covariance[i][j])
    }

    pub fn standard_errors(&self) -> Vec<f64> {
        (0..self.covariance.len())
            .map(|i| self.covariance[i][i].max(0.0).sqrt())
            .collect()
    }

    /// Estimate and standard error of a named entry of `ζ`.
    pub fn coefficient(&self, name: &str) -> Option<(f64, f64)> {
        let i = self.coefficient_names.iter().position(|n| n == name)?;
        Some((self.zeta()[i], self.covariance[i][i].max(0.0).sqrt()))
    }

    pub fn baseline_state(&self) -> Result<BaselineState, EstimationError> {
        let basis = BaselineBasis::new(self.baseline_spec).map_err(crate::model::ModelError::from)?;
        Ok(basis.state(&self.phi))
    }

    /// `θ̂_j` and `Σ_τ(θ_j)` for a term given by label (`quantum:x`) or covariate name.
    pub fn term_posterior(&self, term: &str) -> Result<(&AdditiveTerm, Vec<f64>, DMatrix<f64>), EstimationError> {
        let (t, range) = self
            .layout
            .terms_in_zeta()
            .into_iter()
            .find(|(t, _)| t.label() == term || t.covariate == term)
            .ok_or_else(|| EstimationError::Prediction(format!("no additive term `{term}` in the fitted model")))?;
        let zeta = self.zeta();
        let n = range.len();
        let block = DMatrix::from_fn(n, n, |i, j| self.covariance[range.start + i][range.start + j]);
        Ok((t, zeta[range].to_vec(), block))
    }
}

pub(super) fn deviance(events: &[u8], mu: &[f64]) -> f64 {
    2.0 * events
        .iter()
        .zip(mu)
        .map(|(d, m)| {
            let d = *d as f64;
            let log_term = if d > 0.0 { d * (d / m).ln() } else { 0.0 };
            log_term - (d - m)
        })
        .sum::<f64>()
}

fn statistics_from(
    frame: &ModelFrame,
    base: &BaselineState,
    reg: &RegressionState,
    bundle: &DerivativeBundle,
    sigma: &DMatrix<f64>,
) -> FitStatistics {
    let mu = frame.expected_counts(base, reg);
    let d = deviance(frame.events(), &mu);
    let edf = trace_of_product(sigma, &bundle.data_information);
    FitStatistics {
        loglik: bundle.loglik,
        penalized_loglik: bundle.penalized_loglik,
        deviance: d,
        edf,
        aic: d + 2.0 * edf,
        n_units: frame.n_units(),
        n_rows: frame.n_rows(),
        n_events: frame.n_events(),
    }
}

/// Deviance, EDF and AIC of a fit evaluated on `table`.
pub fn fit_statistics(table: &PersonPeriodTable, fit: &FitResult) -> Result<FitStatistics, EstimationError> {
    let frame = ModelFrame::with_layout(table, fit.layout.clone(), fit.discretization)?;
    let base = fit.baseline_state()?;
    if base.horizon() != frame.baseline.horizon() {
        return Err(crate::model::ModelError::BeyondHorizon {
            month: frame.baseline.horizon() as u32,
            horizon: base.horizon() as u32,
        }
        .into());
    }
    let bundle = derivatives_zeta(&frame, &base, &fit.regression, &fit.penalties)?;
    Ok(statistics_from(&frame, &base, &fit.regression, &bundle, &fit.covariance_matrix()))
}

/// Pointwise 95% bands `f̂_j(x) ± 1.96·sqrt(s(x)ᵀΣ_τ(θ_j)s(x))`.
pub fn credible_bands(fit: &FitResult, term: &str, grid: &[f64]) -> Result<Vec<BandPoint>, EstimationError> {
    let (t, theta, sigma) = fit.term_posterior(term)?;
    Ok(grid
        .iter()
        .map(|&x| {
            let s = t.basis.eval(x);
            let estimate = dot(&s, &theta);
            let sv = nalgebra::DVector::from_vec(s);
            let sd = sv.dot(&(&sigma * &sv)).max(0.0).sqrt();
            BandPoint {
                x,
                estimate,
                sd,
                lower: estimate - Z95 * sd,
                upper: estimate + Z95 * sd,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub t: u32,
    pub hazard: f64,
    pub cumulative_hazard: f64,
    pub survival: f64,
    pub cdf: f64,
}

/// Population hazard and survival along a covariate path for months `1..=horizon`.
///
/// Without an explicit horizon the shortest monthly path (or the baseline
/// horizon when every path is constant) is used.
pub fn predict(
    fit: &FitResult,
    path: &BTreeMap<String, CovariatePath>,
    horizon: Option<u32>,
) -> Result<Vec<PredictionRow>, EstimationError> {
    let names = fit.layout.spec.covariate_names();
    for name in path.keys() {
        if !names.contains(name) {
            return Err(EstimationError::Prediction(format!(
                "covariate `{name}` is not part of the fitted model"
            )));
        }
    }
    for name in &names {
        if !path.contains_key(name) {
            return Err(EstimationError::Prediction(format!("no path given for covariate `{name}`")));
        }
    }
    let base = fit.baseline_state()?;
    let t_max = base.horizon() as u32;
    let shortest = path
        .values()
        .filter_map(|p| match p {
            CovariatePath::Monthly(v) => Some(v.len() as u32),
            CovariatePath::Constant(_) => None,
        })
        .min();
    let horizon = horizon.or(shortest).unwrap_or(t_max);
    if horizon > t_max {
        return Err(crate::model::ModelError::BeyondHorizon {
            month: horizon,
            horizon: t_max,
        }
        .into());
    }
    if let Some(short) = shortest {
        if short < horizon {
            return Err(EstimationError::Prediction(format!(
                "covariate paths cover {short} months, {horizon} requested"
            )));
        }
    }

    let months = base.months(fit.discretization);
    let ln_dt = fit.dt.ln();
    let (q, qt) = (fit.layout.q(), fit.layout.q_tilde());
    let mut xq = vec![0.0; q];
    let mut xt = vec![0.0; qt];
    let mut cumulative = 0.0;
    let mut rows = Vec::with_capacity(horizon as usize);
    for t in 1..=horizon {
        let value = |name: &str| path[name].at(t).expect("path length checked");
        fit.layout.quantum_row(value, &mut xq);
        fit.layout.timing_row(value, &mut xt);
        let eq = dot(&xq, &fit.regression.psi);
        let ef = dot(&xt, &fit.regression.psi_tilde);
        let mu = months.row(&base, t as usize, ln_dt, eq, ef).mu;
        cumulative += mu;
        let survival = (-cumulative).exp();
        rows.push(PredictionRow {
            t,
            hazard: mu / fit.dt,
            cumulative_hazard: cumulative,
            survival,
            cdf: 1.0 - survival,
        });
    }
    Ok(rows)
}
