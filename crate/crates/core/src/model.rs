//! Baseline density, hazards, the Poisson log-likelihood, the penalized
//! log-posterior and its Fisher-form derivatives.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{build_design, DataError, DesignLayout, DesignViews, ModelSpec, PersonPeriodTable};
use crate::linalg::{add_outer, dot, spd_inverse, LinalgError, RowMatrix};
use crate::splines::{build_basis, build_penalty, PenaltyMatrix, SplineError};

/// Floor applied to `S₀(t)` wherever its logarithm is needed.
pub const SURVIVOR_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("{what} has length {found}, expected {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("month {month} lies beyond the baseline horizon {horizon}")]
    BeyondHorizon { month: u32, horizon: u32 },
}

/// How a period's expected count is obtained from the continuous-time hazard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Discretization {
    /// Exact integral of the hazard over the period when `f₀` is constant on it:
    /// `μ_t = dt·e^{η_θ}(S₀(t−1)^{e^{η_F}} − S₀(t)^{e^{η_F}})`.
    #[default]
    Interval,
    /// Hazard evaluated at the end of the period: `μ_t = h(t)·dt`.
    Pointwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineSpec {
    pub horizon: u32,
    pub n_basis: usize,
    pub penalty_order: usize,
}

/// B-spline basis for `log f₀` evaluated on months `1..=T`, with its penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineBasis {
    pub spec: BaselineSpec,
    /// `b_tk`, row `t − 1`.
    pub design: RowMatrix,
    pub penalty: PenaltyMatrix,
    /// Index of the coefficient held at zero.
    pub pin: usize,
}

impl BaselineBasis {
    pub fn new(spec: BaselineSpec) -> Result<Self, SplineError> {
        let horizon = spec.horizon.max(1);
        let basis = build_basis(0.0, horizon as f64, spec.n_basis, 3)?;
        let mut design = RowMatrix::zeros(horizon as usize, spec.n_basis);
        for t in 1..=horizon as usize {
            basis.eval_into(t as f64, design.row_mut(t - 1));
        }
        Ok(Self {
            spec: BaselineSpec { horizon, ..spec },
            design,
            penalty: build_penalty(spec.n_basis, spec.penalty_order)?,
            pin: pin_index(spec.n_basis),
        })
    }

    pub fn horizon(&self) -> usize {
        self.spec.horizon as usize
    }

    pub fn n_basis(&self) -> usize {
        self.spec.n_basis
    }

    pub fn state(&self, phi: &[f64]) -> BaselineState {
        BaselineState::new(self, phi)
    }
}

/// Zero-based position of `φ_⌊K/2⌋`.
pub fn pin_index(n_basis: usize) -> usize {
    (n_basis / 2).saturating_sub(1)
}

/// Baseline quantities implied by `φ`. Vectors indexed by month use slot `t`
/// for month `t`; `pi`, `log_pi` and `bbreve` use slot `t − 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineState {
    pub phi: Vec<f64>,
    pub pi: Vec<f64>,
    pub log_pi: Vec<f64>,
    /// `F₀(t)`, `t = 0..=T`.
    pub cdf: Vec<f64>,
    /// `S₀(t)`, `t = 0..=T`.
    pub survivor: Vec<f64>,
    /// `b̆_tk = b_tk − Σ_s π_s b_sk`.
    pub bbreve: RowMatrix,
    /// `∂S₀(t)/∂φ`, `t = 0..=T`.
    pub dsurvivor: RowMatrix,
}

impl BaselineState {
    fn new(basis: &BaselineBasis, phi: &[f64]) -> Self {
        let t_max = basis.horizon();
        let k = basis.n_basis();
        assert_eq!(phi.len(), k, "φ must have one entry per baseline B-spline");
        let scores: Vec<f64> = (0..t_max).map(|t| dot(basis.design.row(t), phi)).collect();
        let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = top + scores.iter().map(|s| (s - top).exp()).sum::<f64>().ln();
        let log_pi: Vec<f64> = scores.iter().map(|s| s - lse).collect();
        let pi: Vec<f64> = log_pi.iter().map(|l| l.exp()).collect();

        let mut survivor = vec![0.0; t_max + 1];
        for t in (0..t_max).rev() {
            survivor[t] = survivor[t + 1] + pi[t];
        }
        survivor[0] = 1.0;
        let cdf = survivor.iter().map(|s| 1.0 - s).collect();

        let mut mean_b = vec![0.0; k];
        for t in 0..t_max {
            for (m, b) in mean_b.iter_mut().zip(basis.design.row(t)) {
                *m += pi[t] * b;
            }
        }
        let mut bbreve = RowMatrix::zeros(t_max, k);
        for t in 0..t_max {
            for ((o, b), m) in bbreve.row_mut(t).iter_mut().zip(basis.design.row(t)).zip(&mean_b) {
                *o = b - m;
            }
        }
        let mut dsurvivor = RowMatrix::zeros(t_max + 1, k);
        for t in (1..t_max).rev() {
            for j in 0..k {
                let v = dsurvivor.get(t + 1, j) + pi[t] * bbreve.get(t, j);
                dsurvivor.row_mut(t)[j] = v;
            }
        }
        Self {
            phi: phi.to_vec(),
            pi,
            log_pi,
            cdf,
            survivor,
            bbreve,
            dsurvivor,
        }
    }

    pub fn horizon(&self) -> usize {
        self.pi.len()
    }

    /// Per-month constants for one discretization.
    pub fn months(&self, disc: Discretization) -> MonthTerms {
        let t_max = self.horizon();
        let k = self.phi.len();
        let mut a_vec = RowMatrix::zeros(t_max, k);
        let mut b_vec = RowMatrix::zeros(t_max, k);
        let mut ln_a = vec![0.0; t_max];
        let mut ln_c = vec![0.0; t_max];
        let mut lr = vec![0.0; t_max];
        for t in 1..=t_max {
            let s = self.survivor[t];
            let use_ratio = match disc {
                Discretization::Pointwise => s >= SURVIVOR_FLOOR,
                Discretization::Interval => s > 0.0,
            };
            let d = self.dsurvivor.row(t);
            let bb = self.bbreve.row(t - 1);
            let (ar, br) = (a_vec.row_mut(t - 1), &mut vec![0.0; k]);
            for j in 0..k {
                br[j] = if use_ratio { d[j] / s } else { 0.0 };
                ar[j] = match disc {
                    Discretization::Pointwise => bb[j],
                    Discretization::Interval => bb[j] - br[j],
                };
            }
            b_vec.row_mut(t - 1).copy_from_slice(br);
            let a = self.survivor[t - 1];
            ln_a[t - 1] = a.ln();
            ln_c[t - 1] = match disc {
                Discretization::Pointwise => s.max(SURVIVOR_FLOOR).ln(),
                Discretization::Interval => s.ln(),
            };
            lr[t - 1] = if t == t_max {
                f64::NEG_INFINITY
            } else {
                (-self.pi[t - 1] / a).ln_1p()
            };
        }
        MonthTerms {
            disc,
            a_vec,
            b_vec,
            ln_a,
            ln_c,
            lr,
        }
    }
}

/// `∂log μ_t/∂φ = α·A_t + β·B_t`, with `A_t`, `B_t` depending on the month only.
#[derive(Debug, Clone)]
pub struct MonthTerms {
    disc: Discretization,
    a_vec: RowMatrix,
    b_vec: RowMatrix,
    ln_a: Vec<f64>,
    /// `ln S₀(t)`; floored for the pointwise form.
    ln_c: Vec<f64>,
    /// `ln(1 − π_t/S₀(t−1))`.
    lr: Vec<f64>,
}

/// Per-row quantities of the Poisson approximation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowTerms {
    pub log_mu: f64,
    pub mu: f64,
    /// `∂log μ/∂η_F`.
    pub m: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl MonthTerms {
    /// `t` is the one-based month.
    pub fn row(&self, base: &BaselineState, t: usize, ln_dt: f64, eta_q: f64, eta_f: f64) -> RowTerms {
        self.row_with_theta(base, t, ln_dt, eta_q, eta_f, eta_f.exp())
    }

    /// As [`MonthTerms::row`] with `ϑ = e^{η_F}` supplied.
    fn row_with_theta(
        &self,
        base: &BaselineState,
        t: usize,
        ln_dt: f64,
        eta_q: f64,
        eta_f: f64,
        theta: f64,
    ) -> RowTerms {
        let i = t - 1;
        let (log_mu, m, alpha, beta) = match self.disc {
            Discretization::Pointwise => {
                let ln_s = self.ln_c[i];
                (
                    ln_dt + eta_q + eta_f + base.log_pi[i] + (theta - 1.0) * ln_s,
                    1.0 + theta * ln_s,
                    1.0,
                    theta - 1.0,
                )
            }
            Discretization::Interval => {
                let ln_a = self.ln_a[i];
                if t == base.horizon() {
                    (ln_dt + eta_q + theta * ln_a, theta * ln_a, theta, theta)
                } else {
                    let lr = self.lr[i];
                    let e = -(theta * lr).exp_m1();
                    let ln_e = if e > 0.0 {
                        e.ln()
                    } else {
                        theta.ln() + base.log_pi[i] - ln_a
                    };
                    let a = base.survivor[i];
                    (
                        ln_dt + eta_q + theta * ln_a + ln_e,
                        theta * (self.ln_c[i] - lr / e),
                        theta * base.pi[i] / (a * e),
                        theta,
                    )
                }
            }
        };
        RowTerms {
            log_mu,
            mu: log_mu.exp(),
            m,
            alpha,
            beta,
        }
    }

    pub fn a(&self, t: usize) -> &[f64] {
        self.a_vec.row(t - 1)
    }

    pub fn b(&self, t: usize) -> &[f64] {
        self.b_vec.row(t - 1)
    }
}

/// `h_it = μ_it/dt` for one month, computed on the log scale.
pub fn hazard(
    disc: Discretization,
    base: &BaselineState,
    month: u32,
    eta_q: f64,
    eta_f: f64,
) -> f64 {
    base.months(disc).row(base, month as usize, 0.0, eta_q, eta_f).mu
}

/// Softmax baseline on months `1..=horizon` with `K = φ.len()` B-splines.
pub fn baseline(phi: &[f64], horizon: u32) -> Result<BaselineState, SplineError> {
    let basis = BaselineBasis::new(BaselineSpec {
        horizon,
        n_basis: phi.len(),
        penalty_order: 2.min(phi.len().saturating_sub(1)).max(1),
    })?;
    Ok(basis.state(phi))
}

/// Regression coefficients `ψ = (β, vecΘ)` and `ψ̃ = (γ, vecΘ̃)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionState {
    pub psi: Vec<f64>,
    pub psi_tilde: Vec<f64>,
}

impl RegressionState {
    pub fn zeros(q: usize, q_tilde: usize) -> Self {
        Self {
            psi: vec![0.0; q],
            psi_tilde: vec![0.0; q_tilde],
        }
    }

    /// `ζ = (ψᵀ, ψ̃ᵀ)ᵀ`
    pub fn zeta(&self) -> Vec<f64> {
        self.psi.iter().chain(&self.psi_tilde).copied().collect()
    }

    pub fn from_zeta(q: usize, zeta: &[f64]) -> Self {
        Self {
            psi: zeta[..q].to_vec(),
            psi_tilde: zeta[q..].to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyState {
    pub tau0: f64,
    pub lambda: Vec<f64>,
    pub lambda_tilde: Vec<f64>,
    /// Shape `a` of the Gamma prior on each penalty.
    pub gamma_shape: f64,
    /// Rate `d` of the Gamma prior on each penalty.
    pub gamma_rate: f64,
}

impl PenaltyState {
    pub fn uniform(j: usize, j_tilde: usize, value: f64) -> Self {
        Self {
            tau0: value,
            lambda: vec![value; j],
            lambda_tilde: vec![value; j_tilde],
            gamma_shape: 1.0,
            gamma_rate: 1e-4,
        }
    }

    /// `τ = (λᵀ, λ̃ᵀ)ᵀ`
    pub fn tau(&self) -> Vec<f64> {
        self.lambda.iter().chain(&self.lambda_tilde).copied().collect()
    }

    pub fn set_tau(&mut self, tau: &[f64]) {
        let j = self.lambda.len();
        self.lambda.copy_from_slice(&tau[..j]);
        self.lambda_tilde.copy_from_slice(&tau[j..]);
    }

    pub fn is_valid(&self) -> bool {
        self.tau0 > 0.0 && self.tau().iter().all(|l| *l > 0.0)
    }
}

/// Score and Fisher information of `ℓ_p` in `ζ` at fixed `φ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeBundle {
    pub q: usize,
    /// `U^ζ_τ`
    pub score: DVector<f64>,
    /// `−ℋ_τ`
    pub information: DMatrix<f64>,
    /// Data part of `−ℋ_τ`, without any prior precision.
    pub data_information: DMatrix<f64>,
    pub loglik: f64,
    pub penalized_loglik: f64,
}

impl DerivativeBundle {
    pub fn score_psi(&self) -> DVector<f64> {
        self.score.rows(0, self.q).into_owned()
    }

    pub fn score_psi_tilde(&self) -> DVector<f64> {
        let n = self.score.len();
        self.score.rows(self.q, n - self.q).into_owned()
    }

    /// `−H^{ψψ}_λ`
    pub fn block_psi(&self) -> DMatrix<f64> {
        self.information.view((0, 0), (self.q, self.q)).into_owned()
    }

    /// `−H^{ψ̃ψ̃}_λ̃`
    pub fn block_psi_tilde(&self) -> DMatrix<f64> {
        let n = self.information.nrows() - self.q;
        self.information.view((self.q, self.q), (n, n)).into_owned()
    }

    /// `−H^{ψψ̃}`
    pub fn block_cross(&self) -> DMatrix<f64> {
        let n = self.information.nrows() - self.q;
        self.information.view((0, self.q), (self.q, n)).into_owned()
    }

    /// `−H^{ψ̃ψ}`
    pub fn block_cross_transposed(&self) -> DMatrix<f64> {
        let n = self.information.nrows() - self.q;
        self.information.view((self.q, 0), (n, self.q)).into_owned()
    }

    /// `Σ_τ = (−ℋ_τ)⁻¹`
    pub fn covariance(&self) -> Result<DMatrix<f64>, LinalgError> {
        spd_inverse(&self.information)
    }
}

/// Score and Fisher information of `ℓ_p` in `φ` at fixed `ζ`, including the pinned coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiDerivatives {
    pub pin: usize,
    pub score: DVector<f64>,
    pub information: DMatrix<f64>,
    pub loglik: f64,
    pub penalized_loglik: f64,
}

impl PhiDerivatives {
    pub fn reduced_score(&self) -> DVector<f64> {
        self.score.clone().remove_row(self.pin)
    }

    pub fn reduced_information(&self) -> DMatrix<f64> {
        crate::linalg::drop_row_col(&self.information, self.pin)
    }
}

/// Everything needed to evaluate the model on one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFrame {
    pub layout: DesignLayout,
    pub design: DesignViews,
    pub baseline: BaselineBasis,
    pub discretization: Discretization,
    /// Difference penalty `P` shared by all additive terms.
    pub additive_penalty: Option<PenaltyMatrix>,
    months: Vec<u32>,
    events: Vec<u8>,
    dt: f64,
    n_units: usize,
    prior_mean: DVector<f64>,
    /// `diag(Q, 0, Q̃, 0)` over `ζ`.
    prior_precision: DMatrix<f64>,
}

impl ModelFrame {
    pub fn new(table: &PersonPeriodTable, spec: &ModelSpec, disc: Discretization) -> Result<Self, ModelError> {
        let layout = DesignLayout::from_table(table, spec)?;
        Self::with_layout(table, layout, disc)
    }

    pub fn with_layout(
        table: &PersonPeriodTable,
        layout: DesignLayout,
        disc: Discretization,
    ) -> Result<Self, ModelError> {
        let design = build_design(table, &layout)?;
        let spec = &layout.spec;
        let baseline = BaselineBasis::new(BaselineSpec {
            horizon: table.max_month(),
            n_basis: spec.baseline_basis_size,
            penalty_order: spec.penalty_order,
        })?;
        let additive_penalty = if layout.quantum_terms.is_empty() && layout.timing_terms.is_empty() {
            None
        } else {
            Some(build_penalty(spec.additive_dim(), spec.penalty_order)?)
        };
        let (q, qt) = (layout.q(), layout.q_tilde());
        let mut prior_mean = DVector::zeros(q + qt);
        let mut prior_precision = DMatrix::zeros(q + qt, q + qt);
        let qp = spec.quantum_prior();
        let tp = spec.timing_prior();
        for (offset, prior) in [(0, &qp), (q, &tp)] {
            for (i, m) in prior.mean.iter().enumerate() {
                prior_mean[offset + i] = *m;
                for (j, v) in prior.precision[i].iter().enumerate() {
                    prior_precision[(offset + i, offset + j)] = *v;
                }
            }
        }
        Ok(Self {
            layout,
            design,
            baseline,
            discretization: disc,
            additive_penalty,
            months: table.months().to_vec(),
            events: table.events().to_vec(),
            dt: table.dt(),
            n_units: table.n_units(),
            prior_mean,
            prior_precision,
        })
    }

    pub fn q(&self) -> usize {
        self.design.q()
    }

    pub fn q_tilde(&self) -> usize {
        self.design.q_tilde()
    }

    pub fn n_rows(&self) -> usize {
        self.months.len()
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn months(&self) -> &[u32] {
        &self.months
    }

    pub fn events(&self) -> &[u8] {
        &self.events
    }

    pub fn n_events(&self) -> usize {
        self.events.iter().filter(|d| **d == 1).count()
    }

    /// Number of additive terms, quantum then timing.
    pub fn n_terms(&self) -> (usize, usize) {
        (self.layout.quantum_terms.len(), self.layout.timing_terms.len())
    }

    /// Prior means `(b, 0, g, 0)` over `ζ`.
    pub fn prior_mean(&self) -> &DVector<f64> {
        &self.prior_mean
    }

    /// `K_λ ⊕ K̃_λ̃` over `ζ`.
    pub fn penalty_matrix(&self, pen: &PenaltyState) -> DMatrix<f64> {
        let mut k = self.prior_precision.clone();
        if let Some(p) = &self.additive_penalty {
            for ((_, range), lambda) in self.layout.terms_in_zeta().iter().zip(pen.tau()) {
                let mut block = k.view_mut((range.start, range.start), (range.len(), range.len()));
                block += &p.matrix * lambda;
            }
        }
        k
    }

    fn check(&self, base: &BaselineState, reg: &RegressionState) -> Result<(), ModelError> {
        let expect = |what, expected, found| {
            if expected == found {
                Ok(())
            } else {
                Err(ModelError::Dimension { what, expected, found })
            }
        };
        expect("ψ", self.q(), reg.psi.len())?;
        expect("ψ̃", self.q_tilde(), reg.psi_tilde.len())?;
        expect("φ", self.baseline.n_basis(), base.phi.len())?;
        expect("baseline horizon", self.baseline.horizon(), base.horizon())
    }

    fn etas(&self, reg: &RegressionState) -> (Vec<f64>, Vec<f64>) {
        let eq = self.design.quantum.mul_vec(&reg.psi);
        let ef = if self.q_tilde() == 0 {
            vec![0.0; self.design.n_profiles()]
        } else {
            self.design.timing.mul_vec(&reg.psi_tilde)
        };
        (eq, ef)
    }

    /// Visits every row with its profile index, event indicator and row terms.
    fn for_each_row(
        &self,
        base: &BaselineState,
        reg: &RegressionState,
        mut visit: impl FnMut(usize, usize, f64, &RowTerms),
    ) {
        let months = base.months(self.discretization);
        let (eq, ef) = self.etas(reg);
        let ln_dt = self.dt.ln();
        for p in 0..self.design.n_profiles() {
            let theta = ef[p].exp();
            for r in self.design.profile_rows(p) {
                let t = self.months[r] as usize;
                let row = months.row_with_theta(base, t, ln_dt, eq[p], ef[p], theta);
                visit(p, t, self.events[r] as f64, &row);
            }
        }
    }

    /// `μ_it` for every table row.
    pub fn expected_counts(&self, base: &BaselineState, reg: &RegressionState) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_rows());
        self.for_each_row(base, reg, |_, _, _, row| out.push(row.mu));
        out
    }

    pub fn penalty_value(&self, base: &BaselineState, reg: &RegressionState, pen: &PenaltyState) -> f64 {
        let dev = DVector::from_vec(reg.zeta()) - &self.prior_mean;
        let k = self.penalty_matrix(pen);
        0.5 * pen.tau0 * self.baseline.penalty.quadratic_form(&base.phi) + 0.5 * dev.dot(&(&k * &dev))
    }
}

/// `ℓ = Σ(−μ) + Σ d·log μ`
pub fn loglik(frame: &ModelFrame, base: &BaselineState, reg: &RegressionState) -> Result<f64, ModelError> {
    frame.check(base, reg)?;
    let mut ll = 0.0;
    frame.for_each_row(base, reg, |_, _, d, row| {
        ll += d * row.log_mu - row.mu;
    });
    Ok(ll)
}

/// `ℓ_p = ℓ − τ₀/2·φᵀP₀φ − ½(ψ−b)ᵀK_λ(ψ−b) − ½(ψ̃−g)ᵀK̃_λ̃(ψ̃−g)`
pub fn penalized_loglik(
    frame: &ModelFrame,
    base: &BaselineState,
    reg: &RegressionState,
    pen: &PenaltyState,
) -> Result<f64, ModelError> {
    Ok(loglik(frame, base, reg)? - frame.penalty_value(base, reg, pen))
}

pub fn derivatives_phi(
    frame: &ModelFrame,
    base: &BaselineState,
    reg: &RegressionState,
    tau0: f64,
) -> Result<PhiDerivatives, ModelError> {
    frame.check(base, reg)?;
    let t_max = base.horizon();
    let k = base.phi.len();
    // [w_AA, w_AB, w_BB, s_A, s_B] per month
    let mut sums = vec![[0.0f64; 5]; t_max + 1];
    let mut ll = 0.0;
    frame.for_each_row(base, reg, |_, t, d, row| {
        ll += d * row.log_mu - row.mu;
        let s = &mut sums[t];
        s[0] += row.mu * row.alpha * row.alpha;
        s[1] += row.mu * row.alpha * row.beta;
        s[2] += row.mu * row.beta * row.beta;
        let resid = d - row.mu;
        s[3] += resid * row.alpha;
        s[4] += resid * row.beta;
    });
    let months = base.months(frame.discretization);
    let mut score = DVector::zeros(k);
    let mut info = DMatrix::zeros(k, k);
    for t in 1..=t_max {
        let s = &sums[t];
        let (a, b) = (months.a(t), months.b(t));
        for j in 0..k {
            score[j] += s[3] * a[j] + s[4] * b[j];
        }
        add_outer(&mut info, 0, 0, s[0], a, a);
        add_outer(&mut info, 0, 0, s[1], a, b);
        add_outer(&mut info, 0, 0, s[1], b, a);
        add_outer(&mut info, 0, 0, s[2], b, b);
    }
    let phi = DVector::from_column_slice(&base.phi);
    let p0 = &frame.baseline.penalty.matrix;
    score -= (p0 * &phi) * tau0;
    info += p0 * tau0;
    let quad = frame.baseline.penalty.quadratic_form(&base.phi);
    Ok(PhiDerivatives {
        pin: frame.baseline.pin,
        score,
        information: info,
        loglik: ll,
        penalized_loglik: ll - 0.5 * tau0 * quad,
    })
}

pub fn derivatives_zeta(
    frame: &ModelFrame,
    base: &BaselineState,
    reg: &RegressionState,
    pen: &PenaltyState,
) -> Result<DerivativeBundle, ModelError> {
    frame.check(base, reg)?;
    let (q, qt) = (frame.q(), frame.q_tilde());
    let n = q + qt;
    // [Σμ, Σμm, Σμm², Σd, Σdm] per profile
    let mut sums = vec![[0.0f64; 5]; frame.design.n_profiles()];
    let mut ll = 0.0;
    frame.for_each_row(base, reg, |p, _, d, row| {
        ll += d * row.log_mu - row.mu;
        let s = &mut sums[p];
        let mum = row.mu * row.m;
        s[0] += row.mu;
        s[1] += mum;
        s[2] += mum * row.m;
        s[3] += d;
        s[4] += d * row.m;
    });

    let mut score = DVector::zeros(n);
    let mut info = DMatrix::zeros(n, n);
    for (p, s) in sums.iter().enumerate() {
        let x = frame.design.quantum.row(p);
        let xt = frame.design.timing.row(p);
        for (j, v) in x.iter().enumerate() {
            score[j] += v * (s[3] - s[0]);
        }
        for (j, v) in xt.iter().enumerate() {
            score[q + j] += v * (s[4] - s[1]);
        }
        add_outer(&mut info, 0, 0, s[0], x, x);
        if qt > 0 {
            add_outer(&mut info, 0, q, s[1], x, xt);
            add_outer(&mut info, q, q, s[2], xt, xt);
        }
    }
    for i in 0..q {
        for j in q..n {
            info[(j, i)] = info[(i, j)];
        }
    }

    let k = frame.penalty_matrix(pen);
    let dev = DVector::from_vec(reg.zeta()) - frame.prior_mean();
    let kdev = &k * &dev;
    let penalty = 0.5 * pen.tau0 * frame.baseline.penalty.quadratic_form(&base.phi) + 0.5 * dev.dot(&kdev);
    score -= kdev;
    let data_information = info.clone();
    info += k;
    Ok(DerivativeBundle {
        q,
        score,
        information: info,
        data_information,
        loglik: ll,
        penalized_loglik: ll - penalty,
    })
}

/// Fisher information block `−E ∂²ℓ/∂φ∂ζᵀ`, `K × (q + q̃)`.
pub fn cross_information(
    frame: &ModelFrame,
    base: &BaselineState,
    reg: &RegressionState,
) -> Result<DMatrix<f64>, ModelError> {
    frame.check(base, reg)?;
    let (q, qt) = (frame.q(), frame.q_tilde());
    let n = q + qt;
    let t_max = base.horizon();
    // Σ μα·g_ζ and Σ μβ·g_ζ per month, with g_ζ = (x, m·x̃)
    let mut ua = vec![vec![0.0f64; n]; t_max + 1];
    let mut ub = vec![vec![0.0f64; n]; t_max + 1];
    frame.for_each_row(base, reg, |p, t, _, row| {
        let x = frame.design.quantum.row(p);
        let xt = frame.design.timing.row(p);
        for (w, u) in [(row.mu * row.alpha, &mut ua[t]), (row.mu * row.beta, &mut ub[t])] {
            for (j, v) in x.iter().enumerate() {
                u[j] += w * v;
            }
            let wm = w * row.m;
            for (j, v) in xt.iter().enumerate() {
                u[q + j] += wm * v;
            }
        }
    });
    let months = base.months(frame.discretization);
    let k = base.phi.len();
    let mut out = DMatrix::zeros(k, n);
    for t in 1..=t_max {
        add_outer(&mut out, 0, 0, 1.0, months.a(t), &ua[t]);
        add_outer(&mut out, 0, 0, 1.0, months.b(t), &ub[t]);
    }
    Ok(out)
}
