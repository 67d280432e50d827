//! Conditional Newton–Raphson, fixed-point penalty selection and their
//! alternation, plus fit statistics, credible bands and prediction.

mod result;

pub use result::{
    credible_bands, fit_statistics, predict, BandPoint, BaselineCurve, Diagnostics, FitResult,
    FitStatistics, PenaltyResidual, PredictionRow, TermCurve,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, ModelSpec, PersonPeriodTable};
use crate::linalg::{spd_inverse, spd_solve, sup_norm, trace_of_product, LinalgError};
use crate::model::{
    cross_information, derivatives_phi, derivatives_zeta, BaselineState, DerivativeBundle, Discretization, ModelError,
    ModelFrame, PenaltyState, RegressionState,
};

/// Bounds kept on every penalty iterate.
const PENALTY_RANGE: (f64, f64) = (1e-10, 1e12);
/// Largest change of `log λ` allowed in one accelerated update.
const MAX_LOG_STEP: f64 = 5.0;
const MAX_RELAXATION: f64 = 64.0;
/// Relative resolution of `ℓ_p` sums over many rows.
const NOISE_FLOOR: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Regression,
    Baseline,
    Joint,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stage::Regression => write!(f, "regression coefficients"),
            Stage::Baseline => write!(f, "baseline coefficients"),
            Stage::Joint => write!(f, "joint baseline and regression coefficients"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("Newton-Raphson on the {stage} did not converge after {iterations} iterations (score sup-norm {score_norm:.3e}): {reason}")]
    NonConvergence {
        stage: Stage,
        iterations: usize,
        score_norm: f64,
        reason: &'static str,
        /// Last accepted iterate.
        state: Vec<f64>,
    },
    #[error("outer iteration {outer}: {source}")]
    Outer {
        outer: usize,
        #[source]
        source: Box<EstimationError>,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("prediction request: {0}")]
    Prediction(String),
}

impl From<LinalgError> for EstimationError {
    fn from(e: LinalgError) -> Self {
        EstimationError::Model(e.into())
    }
}

impl From<DataError> for EstimationError {
    fn from(e: DataError) -> Self {
        EstimationError::Model(e.into())
    }
}

impl EstimationError {
    /// True when the failure is numerical rather than a problem with the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            EstimationError::Model(ModelError::Linalg(_)) | EstimationError::NonConvergence { .. } => true,
            EstimationError::Outer { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// `ε` on the sup-norm of every score.
    pub score_tolerance: f64,
    pub penalty_rel_tolerance: f64,
    /// Relative change in `ℓ_p` between outer iterations.
    pub outer_rel_tolerance: f64,
    /// Bound on the penalty stationarity residuals required before stopping.
    pub stationarity_tolerance: f64,
    pub max_newton_iterations: usize,
    pub max_penalty_iterations: usize,
    pub max_outer_iterations: usize,
    pub max_step_halvings: usize,
    pub initial_penalty: f64,
    /// Starting `τ₀`; `initial_penalty` when absent.
    pub baseline_penalty: Option<f64>,
    /// When false the penalties stay at `initial_penalty`.
    pub select_penalties: bool,
    /// Adds the Gamma prior terms to the penalty updates.
    pub gamma_prior: bool,
    pub discretization: Discretization,
    /// Joint Newton pass over `(φ, ζ)` at fixed penalties before each outer iteration.
    pub joint_refinement: bool,
    /// Grid size for the per-term curves stored in the result.
    pub curve_points: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            score_tolerance: 1e-4,
            penalty_rel_tolerance: 1e-3,
            outer_rel_tolerance: 1e-4,
            stationarity_tolerance: 1e-7,
            max_newton_iterations: 50,
            max_penalty_iterations: 50,
            max_outer_iterations: 25,
            max_step_halvings: 10,
            initial_penalty: 100.0,
            baseline_penalty: None,
            select_penalties: true,
            gamma_prior: false,
            discretization: Discretization::Interval,
            joint_refinement: true,
            curve_points: 101,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), EstimationError> {
        let positive = [
            ("score_tolerance", self.score_tolerance),
            ("penalty_rel_tolerance", self.penalty_rel_tolerance),
            ("outer_rel_tolerance", self.outer_rel_tolerance),
            ("stationarity_tolerance", self.stationarity_tolerance),
            ("initial_penalty", self.initial_penalty),
            ("baseline_penalty", self.baseline_penalty.unwrap_or(1.0)),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(EstimationError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let caps = [
            ("max_newton_iterations", self.max_newton_iterations),
            ("max_penalty_iterations", self.max_penalty_iterations),
            ("max_outer_iterations", self.max_outer_iterations),
            ("curve_points", self.curve_points),
        ];
        for (name, v) in caps {
            if v == 0 {
                return Err(EstimationError::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

pub(crate) struct NewtonOutcome<T> {
    pub x: DVector<f64>,
    pub iterations: usize,
    /// Evaluation at `x`.
    pub last: T,
}

/// `(ℓ_p, score, information, extra)` at one point.
type Evaluation<T> = (f64, DVector<f64>, DMatrix<f64>, T);

/// Fisher scoring with step halving on a concave objective.
fn newton<T>(
    stage: Stage,
    x0: DVector<f64>,
    cfg: &FitConfig,
    mut eval: impl FnMut(&DVector<f64>) -> Result<Evaluation<T>, EstimationError>,
) -> Result<NewtonOutcome<T>, EstimationError> {
    let mut x = x0;
    let (mut value, mut score, mut info, mut last) = eval(&x)?;
    let mut norm = sup_norm(score.as_slice());
    for it in 0..cfg.max_newton_iterations {
        if norm < cfg.score_tolerance {
            return Ok(NewtonOutcome {
                x,
                iterations: it,
                last,
            });
        }
        let step = spd_solve(&info, &score)?;
        let slack = 8.0 * f64::EPSILON * value.abs().max(1.0);
        // below this predicted gain ℓ_p cannot resolve the step
        let in_noise = 0.5 * score.dot(&step) < NOISE_FLOOR * value.abs().max(1.0);
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=cfg.max_step_halvings {
            let trial = &x + &step * scale;
            let (v, s, i, l) = eval(&trial)?;
            if v.is_finite() && (v >= value - slack || in_noise) {
                x = trial;
                value = v;
                score = s;
                info = i;
                last = l;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            return Err(EstimationError::NonConvergence {
                stage,
                iterations: it,
                score_norm: norm,
                reason: "step halving could not increase the penalized log-likelihood",
                state: x.as_slice().to_vec(),
            });
        }
        norm = sup_norm(score.as_slice());
    }
    if norm < cfg.score_tolerance {
        return Ok(NewtonOutcome {
            x,
            iterations: cfg.max_newton_iterations,
            last,
        });
    }
    Err(EstimationError::NonConvergence {
        stage,
        iterations: cfg.max_newton_iterations,
        score_norm: norm,
        reason: "iteration limit reached",
        state: x.as_slice().to_vec(),
    })
}

/// Newton-Raphson on `ζ`: `ζ ← ζ + (−ℋ_τ)⁻¹U^ζ_τ` at fixed `φ` and `τ`.
pub fn nr_zeta(
    frame: &ModelFrame,
    base: &BaselineState,
    zeta0: &RegressionState,
    pen: &PenaltyState,
    cfg: &FitConfig,
) -> Result<(RegressionState, usize), EstimationError> {
    let (reg, _, its) = nr_zeta_with_derivatives(frame, base, zeta0, pen, cfg)?;
    Ok((reg, its))
}

fn nr_zeta_with_derivatives(
    frame: &ModelFrame,
    base: &BaselineState,
    zeta0: &RegressionState,
    pen: &PenaltyState,
    cfg: &FitConfig,
) -> Result<(RegressionState, DerivativeBundle, usize), EstimationError> {
    let q = frame.q();
    let out = newton(Stage::Regression, DVector::from_vec(zeta0.zeta()), cfg, |z| {
        let reg = RegressionState::from_zeta(q, z.as_slice());
        let d = derivatives_zeta(frame, base, &reg, pen)?;
        Ok((d.penalized_loglik, d.score.clone(), d.information.clone(), d))
    })?;
    Ok((RegressionState::from_zeta(q, out.x.as_slice()), out.last, out.iterations))
}

/// Inserts a zero at the pinned position.
fn expand_phi(reduced: &[f64], pin: usize) -> Vec<f64> {
    let mut phi = Vec::with_capacity(reduced.len() + 1);
    phi.extend_from_slice(&reduced[..pin]);
    phi.push(0.0);
    phi.extend_from_slice(&reduced[pin..]);
    phi
}

fn reduce_phi(phi: &[f64], pin: usize) -> Vec<f64> {
    phi.iter()
        .enumerate()
        .filter(|(k, _)| *k != pin)
        .map(|(_, v)| *v)
        .collect()
}

/// Newton-Raphson on `φ` with the pinned coordinate removed.
pub fn nr_phi(
    frame: &ModelFrame,
    reg: &RegressionState,
    phi0: &[f64],
    tau0: f64,
    cfg: &FitConfig,
) -> Result<(BaselineState, usize), EstimationError> {
    let (base, _, its) = nr_phi_with_information(frame, reg, phi0, tau0, cfg)?;
    Ok((base, its))
}

/// Also returns the reduced information at the solution.
fn nr_phi_with_information(
    frame: &ModelFrame,
    reg: &RegressionState,
    phi0: &[f64],
    tau0: f64,
    cfg: &FitConfig,
) -> Result<(BaselineState, DMatrix<f64>, usize), EstimationError> {
    let pin = frame.baseline.pin;
    let out = newton(Stage::Baseline, DVector::from_vec(reduce_phi(phi0, pin)), cfg, |r| {
        let base = frame.baseline.state(&expand_phi(r.as_slice(), pin));
        let d = derivatives_phi(frame, &base, reg, tau0)?;
        let info = d.reduced_information();
        Ok((d.penalized_loglik, d.reduced_score(), info.clone(), (base, info)))
    })?;
    let (base, info) = out.last;
    Ok((base, info, out.iterations))
}

/// Fisher scoring on `(φ, ζ)` together, pinned coordinate removed, at fixed penalties.
pub fn nr_joint(
    frame: &ModelFrame,
    base: &BaselineState,
    reg: &RegressionState,
    pen: &PenaltyState,
    cfg: &FitConfig,
) -> Result<(BaselineState, RegressionState, usize), EstimationError> {
    let pin = frame.baseline.pin;
    let q = frame.q();
    let phi0 = reduce_phi(&base.phi, pin);
    let kr = phi0.len();
    let x0 = DVector::from_iterator(kr + q + frame.q_tilde(), phi0.into_iter().chain(reg.zeta()));
    let split = |x: &DVector<f64>| {
        let s = x.as_slice();
        (
            frame.baseline.state(&expand_phi(&s[..kr], pin)),
            RegressionState::from_zeta(q, &s[kr..]),
        )
    };
    let out = newton(Stage::Joint, x0, cfg, |x| {
        let (b, r) = split(x);
        let dp = derivatives_phi(frame, &b, &r, pen.tau0)?;
        let dz = derivatives_zeta(frame, &b, &r, pen)?;
        let cross = cross_information(frame, &b, &r)?.remove_row(pin);
        let n = x.len();
        let mut info = DMatrix::zeros(n, n);
        info.view_mut((0, 0), (kr, kr)).copy_from(&dp.reduced_information());
        info.view_mut((kr, kr), (n - kr, n - kr)).copy_from(&dz.information);
        info.view_mut((0, kr), (kr, n - kr)).copy_from(&cross);
        info.view_mut((kr, 0), (n - kr, kr)).copy_from(&cross.transpose());
        let score = DVector::from_iterator(n, dp.reduced_score().iter().chain(dz.score.iter()).copied());
        Ok((dz.penalized_loglik, score, info, (b, r)))
    })?;
    let (b, r) = out.last;
    Ok((b, r, out.iterations))
}

/// `(θᵀPθ, tr(Σ_θθ P), ρ(P))` for every additive term, quantum first.
fn penalty_terms(frame: &ModelFrame, reg: &RegressionState, sigma: &DMatrix<f64>) -> Vec<(f64, f64, f64)> {
    let Some(p) = &frame.additive_penalty else {
        return Vec::new();
    };
    let zeta = reg.zeta();
    frame
        .layout
        .terms_in_zeta()
        .into_iter()
        .map(|(_, range)| {
            let quad = p.quadratic_form(&zeta[range.clone()]);
            let block = sigma
                .view((range.start, range.start), (range.len(), range.len()))
                .into_owned();
            (quad, trace_of_product(&block, &p.matrix), p.rank as f64)
        })
        .collect()
}

fn fixed_point(quad: f64, trace: f64, rank: f64, pen: &PenaltyState, gamma_prior: bool) -> f64 {
    let (num, den) = if gamma_prior {
        (
            quad + trace + 2.0 * pen.gamma_rate,
            rank + 2.0 * (pen.gamma_shape - 1.0),
        )
    } else {
        (quad + trace, rank)
    };
    (den / num).clamp(PENALTY_RANGE.0, PENALTY_RANGE.1)
}

fn stationarity(quad: f64, trace: f64, rank: f64, lambda: f64, pen: &PenaltyState, gamma_prior: bool) -> f64 {
    let mut r = 0.5 * (rank / lambda - quad - trace);
    if gamma_prior {
        r += (pen.gamma_shape - 1.0) / lambda - pen.gamma_rate;
    }
    r
}

/// One fixed-point update of `(λ, λ̃)` given `ζ̂` and `Σ_τ`.
pub fn update_penalties(
    frame: &ModelFrame,
    reg: &RegressionState,
    sigma: &DMatrix<f64>,
    pen: &PenaltyState,
    gamma_prior: bool,
) -> (Vec<f64>, Vec<f64>) {
    let tau: Vec<f64> = penalty_terms(frame, reg, sigma)
        .into_iter()
        .map(|(quad, trace, rank)| fixed_point(quad, trace, rank, pen, gamma_prior))
        .collect();
    let j = pen.lambda.len();
    (tau[..j].to_vec(), tau[j..].to_vec())
}

/// Residuals `∂/∂λ_j log p(λ | 𝒟)` of the Laplace marginal, one per additive term.
pub fn penalty_stationarity(
    frame: &ModelFrame,
    reg: &RegressionState,
    sigma: &DMatrix<f64>,
    pen: &PenaltyState,
    gamma_prior: bool,
) -> Vec<f64> {
    penalty_terms(frame, reg, sigma)
        .into_iter()
        .zip(pen.tau())
        .map(|((quad, trace, rank), lambda)| stationarity(quad, trace, rank, lambda, pen, gamma_prior))
        .collect()
}

/// `(φᵀP₀φ, tr((−H^{φφ})⁻¹P₀), ρ(P₀))` from the pinned-coordinate-reduced information.
fn baseline_penalty_terms(
    frame: &ModelFrame,
    base: &BaselineState,
    reduced_information: &DMatrix<f64>,
) -> Result<(f64, f64, f64), EstimationError> {
    let sigma = spd_inverse(reduced_information)?;
    let p0 = crate::linalg::drop_row_col(&frame.baseline.penalty.matrix, frame.baseline.pin);
    Ok((
        frame.baseline.penalty.quadratic_form(&base.phi),
        trace_of_product(&sigma, &p0),
        frame.baseline.penalty.rank as f64,
    ))
}

fn phi_information(
    frame: &ModelFrame,
    base: &BaselineState,
    reg: &RegressionState,
    tau0: f64,
) -> Result<DMatrix<f64>, EstimationError> {
    Ok(derivatives_phi(frame, base, reg, tau0)?.reduced_information())
}

/// One fixed-point update of `τ₀` given `φ̂`.
pub fn update_tau0(
    frame: &ModelFrame,
    base: &BaselineState,
    reg: &RegressionState,
    pen: &PenaltyState,
    gamma_prior: bool,
) -> Result<f64, EstimationError> {
    let info = phi_information(frame, base, reg, pen.tau0)?;
    let (quad, trace, rank) = baseline_penalty_terms(frame, base, &info)?;
    Ok(fixed_point(quad, trace, rank, pen, gamma_prior))
}

/// Stationarity residual of the `τ₀` marginal.
pub fn tau0_stationarity(
    frame: &ModelFrame,
    base: &BaselineState,
    reg: &RegressionState,
    pen: &PenaltyState,
    gamma_prior: bool,
) -> Result<f64, EstimationError> {
    let info = phi_information(frame, base, reg, pen.tau0)?;
    let (quad, trace, rank) = baseline_penalty_terms(frame, base, &info)?;
    Ok(stationarity(quad, trace, rank, pen.tau0, pen, gamma_prior))
}

/// Log-scale fixed-point iteration with per-coordinate over-relaxation.
///
/// While successive updates keep their direction the step is doubled; a sign
/// change resets it. Penalties that drift towards infinity (terms that are
/// linear in truth) otherwise need hundreds of plain updates.
#[derive(Debug, Clone)]
struct Relaxation {
    omega: Vec<f64>,
    last: Vec<f64>,
}

impl Relaxation {
    fn new(n: usize) -> Self {
        Self {
            omega: vec![1.0; n],
            last: vec![0.0; n],
        }
    }

    fn step(&mut self, current: &mut [f64], target: &[f64]) {
        for i in 0..current.len() {
            let delta = target[i].ln() - current[i].ln();
            if delta * self.last[i] > 0.0 {
                self.omega[i] = (self.omega[i] * 2.0).min(MAX_RELAXATION);
            } else {
                self.omega[i] = 1.0;
            }
            self.last[i] = delta;
            let step = (self.omega[i] * delta).clamp(-MAX_LOG_STEP, MAX_LOG_STEP);
            current[i] = (current[i].ln() + step)
                .exp()
                .clamp(PENALTY_RANGE.0, PENALTY_RANGE.1);
        }
    }
}

fn max_rel_change(current: &[f64], target: &[f64]) -> f64 {
    current
        .iter()
        .zip(target)
        .map(|(c, t)| ((t - c) / c).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Default)]
struct Counters {
    newton_zeta: usize,
    newton_phi: usize,
    newton_joint: usize,
    penalty_updates: usize,
    tau0_updates: usize,
}

/// `ζ` and `τ` given `φ`.
fn regression_block(
    frame: &ModelFrame,
    base: &BaselineState,
    reg: RegressionState,
    pen: &mut PenaltyState,
    cfg: &FitConfig,
    counters: &mut Counters,
) -> Result<(RegressionState, DerivativeBundle, DMatrix<f64>), EstimationError> {
    let mut reg = reg;
    let mut relax = Relaxation::new(pen.tau().len());
    for _ in 0..cfg.max_penalty_iterations {
        let (next, bundle, its) = nr_zeta_with_derivatives(frame, base, &reg, pen, cfg)?;
        counters.newton_zeta += its;
        reg = next;
        let sigma = bundle.covariance()?;
        if pen.tau().is_empty() || !cfg.select_penalties {
            return Ok((reg, bundle, sigma));
        }
        let (l, lt) = update_penalties(frame, &reg, &sigma, pen, cfg.gamma_prior);
        let target: Vec<f64> = l.into_iter().chain(lt).collect();
        let mut tau = pen.tau();
        let residual = sup_norm(&penalty_stationarity(frame, &reg, &sigma, pen, cfg.gamma_prior));
        if max_rel_change(&tau, &target) < cfg.penalty_rel_tolerance && residual < cfg.stationarity_tolerance {
            return Ok((reg, bundle, sigma));
        }
        relax.step(&mut tau, &target);
        pen.set_tau(&tau);
        counters.penalty_updates += 1;
    }
    let (next, bundle, its) = nr_zeta_with_derivatives(frame, base, &reg, pen, cfg)?;
    counters.newton_zeta += its;
    let sigma = bundle.covariance()?;
    log::debug!("penalty selection for ζ hit its iteration limit");
    Ok((next, bundle, sigma))
}

/// `φ` and `τ₀` given `ζ`.
fn baseline_block(
    frame: &ModelFrame,
    base: BaselineState,
    reg: &RegressionState,
    pen: &mut PenaltyState,
    cfg: &FitConfig,
    counters: &mut Counters,
) -> Result<BaselineState, EstimationError> {
    let mut base = base;
    let mut relax = Relaxation::new(1);
    for _ in 0..cfg.max_penalty_iterations {
        let (next, info, its) = nr_phi_with_information(frame, reg, &base.phi, pen.tau0, cfg)?;
        counters.newton_phi += its;
        base = next;
        if !cfg.select_penalties {
            return Ok(base);
        }
        let (quad, trace, rank) = baseline_penalty_terms(frame, &base, &info)?;
        let target = fixed_point(quad, trace, rank, pen, cfg.gamma_prior);
        let residual = stationarity(quad, trace, rank, pen.tau0, pen, cfg.gamma_prior).abs();
        let mut tau0 = [pen.tau0];
        if max_rel_change(&tau0, &[target]) < cfg.penalty_rel_tolerance && residual < cfg.stationarity_tolerance {
            return Ok(base);
        }
        relax.step(&mut tau0, &[target]);
        pen.tau0 = tau0[0];
        counters.tau0_updates += 1;
    }
    let (next, its) = nr_phi(frame, reg, &base.phi, pen.tau0, cfg)?;
    counters.newton_phi += its;
    log::debug!("penalty selection for φ hit its iteration limit");
    Ok(next)
}

/// Alternates the baseline and regression blocks until `ℓ_p` settles.
pub fn fit(table: &PersonPeriodTable, spec: &ModelSpec, cfg: &FitConfig) -> Result<FitResult, EstimationError> {
    let frame = ModelFrame::new(table, spec, cfg.discretization)?;
    fit_frame(&frame, cfg)
}

/// Same as [`fit`] on a prepared frame.
pub fn fit_frame(frame: &ModelFrame, cfg: &FitConfig) -> Result<FitResult, EstimationError> {
    cfg.validate()?;
    let (j, jt) = frame.n_terms();
    let mut pen = PenaltyState::uniform(j, jt, cfg.initial_penalty);
    if let Some(tau0) = cfg.baseline_penalty {
        pen.tau0 = tau0;
    }
    let mut reg = RegressionState::zeros(frame.q(), frame.q_tilde());
    let mut base = frame.baseline.state(&vec![0.0; frame.baseline.n_basis()]);
    let mut counters = Counters::default();
    let mut previous = f64::NEG_INFINITY;
    let mut converged = false;
    let mut outer = 0;

    let mut last = None;
    while outer < cfg.max_outer_iterations {
        outer += 1;
        let wrap = |e: EstimationError| EstimationError::Outer {
            outer,
            source: Box::new(e),
        };
        if outer > 1 && cfg.joint_refinement {
            match nr_joint(frame, &base, &reg, &pen, cfg) {
                Ok((b, r, its)) => {
                    counters.newton_joint += its;
                    base = b;
                    reg = r;
                }
                Err(EstimationError::NonConvergence { iterations, .. }) => {
                    counters.newton_joint += iterations;
                    log::debug!("outer {outer}: joint pass skipped after {iterations} iterations");
                }
                Err(e) => return Err(wrap(e)),
            }
        }
        base = baseline_block(frame, base, &reg, &mut pen, cfg, &mut counters).map_err(wrap)?;
        let (next, bundle, sigma) = regression_block(frame, &base, reg, &mut pen, cfg, &mut counters).map_err(wrap)?;
        reg = next;

        let lp = bundle.penalized_loglik;
        let rel = ((lp - previous) / lp.abs().max(1.0)).abs();
        previous = lp;
        let dphi = derivatives_phi(frame, &base, &reg, pen.tau0)?;
        let phi_score = sup_norm(dphi.reduced_score().as_slice());
        let tau0_res = if cfg.select_penalties {
            let (quad, trace, rank) = baseline_penalty_terms(frame, &base, &dphi.reduced_information())?;
            stationarity(quad, trace, rank, pen.tau0, &pen, cfg.gamma_prior).abs()
        } else {
            0.0
        };
        log::debug!(
            "outer {outer}: ℓp = {lp:.6}, rel change {rel:.2e}, φ score {phi_score:.2e}, τ₀ residual {tau0_res:.2e}"
        );
        last = Some((bundle, sigma));
        if rel < cfg.outer_rel_tolerance && phi_score < cfg.score_tolerance && tau0_res < cfg.stationarity_tolerance
        {
            converged = true;
            break;
        }
    }
    let (bundle, sigma) = last.expect("at least one outer iteration");
    if !converged {
        log::warn!("outer alternation stopped after {outer} iterations without meeting its tolerances");
    }
    let diagnostics = Diagnostics::collect(frame, &base, &reg, &pen, &bundle, &sigma, cfg, result::IterationCounts {
        outer,
        newton_zeta: counters.newton_zeta,
        newton_phi: counters.newton_phi,
        newton_joint: counters.newton_joint,
        penalty_updates: counters.penalty_updates,
        tau0_updates: counters.tau0_updates,
        converged,
    })?;
    FitResult::assemble(frame, base, reg, pen, &bundle, sigma, diagnostics, cfg)
}
