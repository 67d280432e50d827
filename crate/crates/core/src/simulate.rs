//! Latent-Poisson data generator for the two censoring scenarios and the
//! replication harness measuring bias, RMSE, RMISE and coverage.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use thiserror::Error;

use crate::data::{expand, CovariatePath, DataError, ModelSpec, PersonPeriodTable, Submodel, SurvivalRecord};
use crate::estimation::{credible_bands, fit, FitConfig, FitResult};

/// Points of the evaluation grid used for term metrics.
pub const TERM_GRID_POINTS: usize = 101;

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
    #[error("thread pool: {0}")]
    Threads(String),
}

/// Generative truth and study size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimScenario {
    pub name: String,
    /// Units per dataset.
    pub n: usize,
    /// Datasets generated by `replicate`.
    pub replicates: usize,
    pub horizon: u32,
    pub weibull_shape: f64,
    pub weibull_scale: f64,
    /// `(β₀, β₁, β₂)`
    pub beta: [f64; 3],
    /// `(γ₁, γ₂)`
    pub gamma: [f64; 2],
    /// Bounds of the uniform censoring law.
    pub censoring: [f64; 2],
    pub seed: u64,
}

impl Default for SimScenario {
    fn default() -> Self {
        Self::scenario2(500)
    }
}

impl SimScenario {
    fn base(name: &str, n: usize, censoring: [f64; 2]) -> Self {
        Self {
            name: name.into(),
            n,
            replicates: 500,
            horizon: 299,
            weibull_shape: 2.65,
            weibull_scale: 133.0,
            beta: [0.0, -0.1, 0.15],
            gamma: [0.1, 0.2],
            censoring,
            seed: 1,
        }
    }

    /// Censoring on `(120, 299)`.
    pub fn scenario1(n: usize) -> Self {
        Self::base("scenario1", n, [120.0, 299.0])
    }

    /// Censoring on `(60, 299)`.
    pub fn scenario2(n: usize) -> Self {
        Self::base("scenario2", n, [60.0, 299.0])
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        let bad = |m: String| Err(SimulationError::Scenario(m));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if self.replicates == 0 {
            return bad("replicates must be positive".into());
        }
        if !(self.weibull_shape > 0.0 && self.weibull_scale > 0.0) {
            return bad("Weibull shape and scale must be positive".into());
        }
        let [lo, hi] = self.censoring;
        if !(lo > 0.0 && hi >= lo && hi <= self.horizon as f64) {
            return bad(format!(
                "censoring bounds ({lo}, {hi}) must satisfy 0 < lo <= hi <= horizon {}",
                self.horizon
            ));
        }
        if self.beta.iter().chain(&self.gamma).any(|v| !v.is_finite()) {
            return bad("regression truth must be finite".into());
        }
        Ok(())
    }

    /// `S₀(t)` of the Weibull baseline.
    pub fn baseline_survivor(&self, t: f64) -> f64 {
        (-(t / self.weibull_scale).powf(self.weibull_shape)).exp()
    }

    /// Model fitted to every simulated dataset.
    pub fn model_spec() -> ModelSpec {
        ModelSpec {
            quantum_linear: vec!["z1".into(), "z2".into()],
            quantum_additive: vec!["x1".into(), "x2".into()],
            timing_linear: vec!["z3".into(), "z4".into()],
            timing_additive: vec!["x1".into(), "x3".into()],
            ..ModelSpec::default()
        }
    }

    /// Linear predictors `(η_θ, η_F)` for one unit.
    pub fn predictors(&self, u: &UnitCovariates) -> (f64, f64) {
        let [b0, b1, b2] = self.beta;
        let [g1, g2] = self.gamma;
        (
            b0 + b1 * u.z1 + b2 * u.z2 + f1(u.x1) + f2(u.x2),
            g1 * u.z3 + g2 * u.z4 + ft1(u.x1) + ft2(u.x3),
        )
    }

    /// Population survival `exp(−θ(v)·(1 − S₀(t)^{e^{η_F}}))`.
    pub fn population_survival(&self, u: &UnitCovariates, t: f64) -> f64 {
        let (eq, ef) = self.predictors(u);
        (-(eq.exp()) * (1.0 - self.baseline_survivor(t).powf(ef.exp()))).exp()
    }

    /// Event time of one unit, `None` when cured.
    pub fn latent_time(&self, u: &UnitCovariates, rng: &mut impl Rng) -> Option<f64> {
        let (eq, ef) = self.predictors(u);
        let count = Poisson::new(eq.exp()).map(|p| p.sample(rng) as u64).unwrap_or(0);
        let vartheta = ef.exp();
        (0..count)
            .map(|_| {
                // F(y|ṽ) = 1 − S₀(y)^ϑ = u  ⇔  y = scale·(−ln(1 − u)/ϑ)^{1/shape}
                let v: f64 = rng.random();
                self.weibull_scale * ((-(1.0 - v).ln()) / vartheta).powf(1.0 / self.weibull_shape)
            })
            .reduce(f64::min)
    }
}

pub fn f1(x: f64) -> f64 {
    -1.14 + 2.4 * x - 0.88 * x * x
}

pub fn f2(x: f64) -> f64 {
    -0.3 * (2.0 * std::f64::consts::PI * x).cos()
}

pub fn ft1(x: f64) -> f64 {
    0.15 - 0.5 * (std::f64::consts::PI * (x - 0.75)).cos()
}

pub fn ft2(x: f64) -> f64 {
    0.6 * (x - 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitCovariates {
    pub z1: f64,
    pub z2: f64,
    pub z3: f64,
    pub z4: f64,
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
}

impl UnitCovariates {
    pub fn draw(rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let z1 = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
        let z2 = normal.sample(rng);
        let z3 = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
        let z4 = normal.sample(rng);
        Self {
            z1,
            z2,
            z3,
            z4,
            x1: rng.random_range(0.0..1.5),
            x2: rng.random_range(0.0..1.0),
            x3: rng.random_range(0.0..1.0),
        }
    }

    fn paths(&self) -> BTreeMap<String, CovariatePath> {
        [
            ("z1", self.z1),
            ("z2", self.z2),
            ("z3", self.z3),
            ("z4", self.z4),
            ("x1", self.x1),
            ("x2", self.x2),
            ("x3", self.x3),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), CovariatePath::Constant(v)))
        .collect()
    }
}

/// Generator for replicate `index`: the scenario seed picks the key and the index the stream.
pub fn replicate_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws `scenario.n` units with the given generator.
pub fn generate_with(scenario: &SimScenario, rng: &mut impl Rng) -> Vec<SurvivalRecord> {
    let [lo, hi] = scenario.censoring;
    (0..scenario.n)
        .map(|i| {
            let u = UnitCovariates::draw(rng);
            let y = scenario.latent_time(&u, rng).unwrap_or(f64::INFINITY);
            let c = if hi > lo { rng.random_range(lo..hi) } else { lo };
            let observed = y.min(c);
            SurvivalRecord {
                unit_id: format!("{}", i + 1),
                followup: (observed.ceil() as u32).clamp(1, scenario.horizon),
                event: y < c,
                covariates: u.paths(),
            }
        })
        .collect()
}

/// First dataset of the scenario (stream 0).
pub fn generate(scenario: &SimScenario) -> Vec<SurvivalRecord> {
    generate_with(scenario, &mut replicate_rng(scenario.seed, 0))
}

pub fn generate_table(scenario: &SimScenario, index: u64) -> Result<PersonPeriodTable, SimulationError> {
    let records = generate_with(scenario, &mut replicate_rng(scenario.seed, index));
    Ok(expand(&records, 1.0)?)
}

/// A true additive function on its simulation domain.
#[derive(Debug, Clone, Copy)]
pub struct TrueTerm {
    /// Column label used in summary tables.
    pub name: &'static str,
    pub covariate: &'static str,
    pub submodel: Submodel,
    pub domain: (f64, f64),
    pub f: fn(f64) -> f64,
    /// Domain average of `f`.
    pub mean: f64,
}

impl TrueTerm {
    pub fn raw(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    pub fn centered(&self, x: f64) -> f64 {
        (self.f)(x) - self.mean
    }

    /// Label of the matching term in a fitted model.
    pub fn model_label(&self) -> String {
        let prefix = match self.submodel {
            Submodel::Quantum => "quantum",
            Submodel::Timing => "timing",
        };
        format!("{prefix}:{}", self.covariate)
    }

    pub fn grid(&self) -> Vec<f64> {
        let (lo, hi) = self.domain;
        (0..TERM_GRID_POINTS)
            .map(|i| lo + (hi - lo) * i as f64 / (TERM_GRID_POINTS - 1) as f64)
            .collect()
    }
}

/// Truth aligned with the centered parameterization of the fitted model.
#[derive(Debug, Clone)]
pub struct CenteredTruth {
    pub terms: Vec<TrueTerm>,
    /// `β₀` plus the domain means of the quantum terms.
    pub beta0: f64,
    /// Sum of the timing-term means, absorbed by the baseline as `S₀^{e^{c}}`.
    pub baseline_shift: f64,
}

/// Domain average by composite Simpson's rule on 2000 panels.
pub fn domain_mean(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let panels = 2000;
    let h = (hi - lo) / panels as f64;
    let mut acc = f(lo) + f(hi);
    for i in 1..panels {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + i as f64 * h);
    }
    acc * h / 3.0 / (hi - lo)
}

pub fn identifiability_centering(scenario: &SimScenario) -> CenteredTruth {
    let term = |name, covariate, submodel, domain: (f64, f64), f: fn(f64) -> f64| TrueTerm {
        name,
        covariate,
        submodel,
        domain,
        f,
        mean: domain_mean(f, domain.0, domain.1),
    };
    let terms = vec![
        term("f1", "x1", Submodel::Quantum, (0.0, 1.5), f1),
        term("f2", "x2", Submodel::Quantum, (0.0, 1.0), f2),
        term("ft1", "x1", Submodel::Timing, (0.0, 1.5), ft1),
        term("ft2", "x3", Submodel::Timing, (0.0, 1.0), ft2),
    ];
    let quantum: f64 = terms.iter().filter(|t| t.submodel == Submodel::Quantum).map(|t| t.mean).sum();
    let timing: f64 = terms.iter().filter(|t| t.submodel == Submodel::Timing).map(|t| t.mean).sum();
    CenteredTruth {
        beta0: scenario.beta[0] + quantum,
        baseline_shift: timing,
        terms,
    }
}

/// `(table label, fitted coefficient name)` for the linear parameters.
pub const PARAMETERS: [(&str, &str); 5] = [
    ("beta0", "quantum:(intercept)"),
    ("beta1", "quantum:z1"),
    ("beta2", "quantum:z2"),
    ("gamma1", "timing:z3"),
    ("gamma2", "timing:z4"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub truth: f64,
    pub bias: f64,
    pub rmse: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermSummary {
    pub name: String,
    pub ma_bias: f64,
    pub rmise: f64,
    pub coverage: f64,
}

/// Metrics of one fitted replicate against the truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub index: usize,
    pub converged: bool,
    pub error: Option<String>,
    /// Estimates in [`PARAMETERS`] order.
    pub estimates: Vec<f64>,
    pub standard_errors: Vec<f64>,
    /// Per term: fitted curve on the term grid.
    pub curves: Vec<Vec<f64>>,
    /// Per term: grid points where the band covers the truth.
    pub covered: Vec<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub scenario: String,
    pub n: usize,
    pub replicates: usize,
    pub used: usize,
    pub failed: usize,
    pub parameters: Vec<ParameterSummary>,
    pub terms: Vec<TermSummary>,
    pub outcomes: Vec<ReplicateOutcome>,
}

fn evaluate_fit(index: usize, fit: &FitResult, truth: &CenteredTruth) -> ReplicateOutcome {
    let mut estimates = Vec::new();
    let mut standard_errors = Vec::new();
    for (_, name) in PARAMETERS {
        let (e, s) = fit.coefficient(name).unwrap_or((f64::NAN, f64::NAN));
        estimates.push(e);
        standard_errors.push(s);
    }
    let mut curves = Vec::new();
    let mut covered = Vec::new();
    for term in &truth.terms {
        let grid = term.grid();
        let bands = credible_bands(fit, &term.model_label(), &grid).unwrap_or_default();
        curves.push(bands.iter().map(|b| b.estimate).collect());
        covered.push(
            bands
                .iter()
                .map(|b| {
                    let f = term.centered(b.x);
                    b.lower <= f && f <= b.upper
                })
                .collect(),
        );
    }
    ReplicateOutcome {
        index,
        converged: fit.diagnostics.converged,
        error: None,
        estimates,
        standard_errors,
        curves,
        covered,
    }
}

/// Fits replicate `index` of the scenario.
pub fn run_replicate(scenario: &SimScenario, cfg: &FitConfig, index: usize) -> ReplicateOutcome {
    let truth = identifiability_centering(scenario);
    let failed = |msg: String| ReplicateOutcome {
        index,
        converged: false,
        error: Some(msg),
        estimates: Vec::new(),
        standard_errors: Vec::new(),
        curves: Vec::new(),
        covered: Vec::new(),
    };
    let table = match generate_table(scenario, index as u64) {
        Ok(t) => t,
        Err(e) => return failed(e.to_string()),
    };
    match fit(&table, &SimScenario::model_spec(), cfg) {
        Ok(f) => evaluate_fit(index, &f, &truth),
        Err(e) => failed(e.to_string()),
    }
}

/// Aggregates replicate outcomes in index order; non-converged replicates are excluded.
pub fn summarize(scenario: &SimScenario, outcomes: Vec<ReplicateOutcome>) -> ReplicationSummary {
    let truth = identifiability_centering(scenario);
    let used: Vec<&ReplicateOutcome> = outcomes.iter().filter(|o| o.converged && o.error.is_none()).collect();
    let s = used.len() as f64;
    let true_values = [
        truth.beta0,
        scenario.beta[1],
        scenario.beta[2],
        scenario.gamma[0],
        scenario.gamma[1],
    ];
    let parameters = PARAMETERS
        .iter()
        .enumerate()
        .map(|(k, (label, _))| {
            let truth_k = true_values[k];
            let errors: Vec<f64> = used.iter().map(|o| o.estimates[k] - truth_k).collect();
            let covered = used
                .iter()
                .filter(|o| (o.estimates[k] - truth_k).abs() <= 1.959963984540054 * o.standard_errors[k])
                .count();
            ParameterSummary {
                name: label.to_string(),
                truth: truth_k,
                bias: errors.iter().sum::<f64>() / s,
                rmse: (errors.iter().map(|e| e * e).sum::<f64>() / s).sqrt(),
                coverage: 100.0 * covered as f64 / s,
            }
        })
        .collect();
    let terms = truth
        .terms
        .iter()
        .enumerate()
        .map(|(k, term)| {
            let grid = term.grid();
            let g = grid.len() as f64;
            let mut ma_bias = 0.0;
            let mut sq = 0.0;
            let mut cover = 0usize;
            for (i, x) in grid.iter().enumerate() {
                let f = term.centered(*x);
                let mean: f64 = used.iter().map(|o| o.curves[k][i]).sum::<f64>() / s;
                ma_bias += (mean - f).abs();
                sq += used.iter().map(|o| (o.curves[k][i] - f).powi(2)).sum::<f64>();
                cover += used.iter().filter(|o| o.covered[k][i]).count();
            }
            TermSummary {
                name: term.name.to_string(),
                ma_bias: ma_bias / g,
                rmise: (sq / (s * g)).sqrt(),
                coverage: 100.0 * cover as f64 / (s * g),
            }
        })
        .collect();
    ReplicationSummary {
        scenario: scenario.name.clone(),
        n: scenario.n,
        replicates: outcomes.len(),
        used: used.len(),
        failed: outcomes.len() - used.len(),
        parameters,
        terms,
        outcomes,
    }
}

/// Generates and fits `scenario.replicates` datasets; replicates run on a
/// rayon pool of `threads` workers (all cores when `None`).
pub fn replicate(
    scenario: &SimScenario,
    cfg: &FitConfig,
    threads: Option<usize>,
) -> Result<ReplicationSummary, SimulationError> {
    scenario.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| SimulationError::Threads(e.to_string()))?;
    let outcomes: Vec<ReplicateOutcome> = pool.install(|| {
        (0..scenario.replicates)
            .into_par_iter()
            .map(|i| run_replicate(scenario, cfg, i))
            .collect()
    });
    Ok(summarize(scenario, outcomes))
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

/// Parameter table: one row per metric, one column per parameter.
pub fn write_parameter_table(summary: &ReplicationSummary, out: impl Write) -> Result<(), SimulationError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["scenario".to_string(), "n".into(), "metric".into()];
    header.extend(summary.parameters.iter().map(|p| p.name.clone()));
    w.write_record(&header).map_err(csv_io)?;
    let rows: [(&str, fn(&ParameterSummary) -> f64); 4] = [
        ("truth", |p| p.truth),
        ("bias", |p| p.bias),
        ("rmse", |p| p.rmse),
        ("coverage", |p| p.coverage),
    ];
    for (metric, get) in rows {
        let mut rec = vec![summary.scenario.clone(), summary.n.to_string(), metric.into()];
        rec.extend(summary.parameters.iter().map(|p| fmt(get(p))));
        w.write_record(&rec).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

/// Additive-term table: one row per metric, one column per term.
pub fn write_term_table(summary: &ReplicationSummary, out: impl Write) -> Result<(), SimulationError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["scenario".to_string(), "n".into(), "metric".into()];
    header.extend(summary.terms.iter().map(|t| t.name.clone()));
    w.write_record(&header).map_err(csv_io)?;
    let rows: [(&str, fn(&TermSummary) -> f64); 3] = [
        ("ma_bias", |t| t.ma_bias),
        ("rmise", |t| t.rmise),
        ("coverage", |t| t.coverage),
    ];
    for (metric, get) in rows {
        let mut rec = vec![summary.scenario.clone(), summary.n.to_string(), metric.into()];
        rec.extend(summary.terms.iter().map(|t| fmt(get(t))));
        w.write_record(&rec).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per replicate with its convergence flag and estimates.
pub fn write_replicate_estimates(summary: &ReplicationSummary, out: impl Write) -> Result<(), SimulationError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["replicate".to_string(), "converged".into()];
    for (label, _) in PARAMETERS {
        header.push(label.into());
        header.push(format!("{label}_se"));
    }
    header.push("error".into());
    w.write_record(&header).map_err(csv_io)?;
    for o in &summary.outcomes {
        let mut rec = vec![o.index.to_string(), o.converged.to_string()];
        for k in 0..PARAMETERS.len() {
            rec.push(o.estimates.get(k).map_or(String::new(), |v| fmt(*v)));
            rec.push(o.standard_errors.get(k).map_or(String::new(), |v| fmt(*v)));
        }
        rec.push(o.error.clone().unwrap_or_default());
        w.write_record(&rec).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> SimulationError {
    SimulationError::Io(std::io::Error::other(e.to_string()))
}

/// Fraction of units with `N = 0` and fraction right-censored in one draw.
pub fn cure_and_censoring_rates(scenario: &SimScenario, rng: &mut impl Rng) -> (f64, f64) {
    let [lo, hi] = scenario.censoring;
    let mut cured = 0usize;
    let mut censored = 0usize;
    for _ in 0..scenario.n {
        let u = UnitCovariates::draw(rng);
        let y = scenario.latent_time(&u, rng);
        let c = if hi > lo { rng.random_range(lo..hi) } else { lo };
        if y.is_none() {
            cured += 1;
        }
        if y.is_none_or(|y| y >= c) {
            censored += 1;
        }
    }
    (cured as f64 / scenario.n as f64, censored as f64 / scenario.n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rate_means_everyone_is_cured() {
        let mut s = SimScenario::scenario2(500);
        s.beta[0] = -60.0;
        let records = generate(&s);
        assert!(records.iter().all(|r| !r.event));
    }

    #[test]
    fn same_seed_same_data() {
        let s = SimScenario::scenario1(200);
        assert_eq!(generate(&s), generate(&s));
        let a = generate_table(&s, 3).unwrap();
        let b = generate_table(&s, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(generate_table(&s, 4).unwrap(), a);
    }

    #[test]
    fn records_respect_censoring_window() {
        let s = SimScenario::scenario2(2000);
        for r in generate(&s) {
            assert!(r.followup >= 1 && r.followup <= 299);
            if !r.event {
                assert!(r.followup >= 60);
            }
        }
    }

    #[test]
    fn centering_matches_trapezoid_oracle() {
        let truth = identifiability_centering(&SimScenario::scenario2(10));
        for t in &truth.terms {
            let (lo, hi) = t.domain;
            let n = 100_001;
            let h = (hi - lo) / (n - 1) as f64;
            let trap: f64 = (0..n)
                .map(|i| {
                    let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                    w * t.centered(lo + i as f64 * h)
                })
                .sum::<f64>()
                * h
                / (hi - lo);
            assert!(trap.abs() < 1e-8, "{} {}", t.name, trap);
        }
        let ft2 = truth.terms.iter().find(|t| t.name == "ft2").unwrap();
        assert!(ft2.mean.abs() < 1e-14);
        assert!(domain_mean(|_| 0.0, 0.0, 1.0) == 0.0);
    }

    #[test]
    fn empirical_survival_matches_population_law() {
        let s = SimScenario::scenario2(1);
        let u = UnitCovariates {
            z1: 1.0,
            z2: 0.3,
            z3: 0.0,
            z4: -0.5,
            x1: 0.8,
            x2: 0.25,
            x3: 0.6,
        };
        let mut rng = replicate_rng(9, 0);
        let draws: Vec<Option<f64>> = (0..200_000).map(|_| s.latent_time(&u, &mut rng)).collect();
        for t in [50.0, 100.0, 150.0] {
            let km = draws.iter().filter(|y| y.is_none_or(|y| y > t)).count() as f64 / draws.len() as f64;
            assert!((km - s.population_survival(&u, t)).abs() < 0.005, "t={t}");
        }
    }

    #[test]
    fn summary_of_one_replicate_is_its_own_error() {
        let s = SimScenario::scenario2(10);
        let truth = identifiability_centering(&s);
        let outcome = ReplicateOutcome {
            index: 0,
            converged: true,
            error: None,
            estimates: vec![0.1, -0.2, 0.2, 0.05, 0.3],
            standard_errors: vec![0.2, 0.05, 0.1, 0.1, 0.01],
            curves: truth.terms.iter().map(|t| t.grid().iter().map(|x| t.centered(*x) + 0.1).collect()).collect(),
            covered: truth.terms.iter().map(|_| vec![true; TERM_GRID_POINTS]).collect(),
        };
        let sum = summarize(&s, vec![outcome.clone()]);
        let truths = [truth.beta0, -0.1, 0.15, 0.1, 0.2];
        for (k, p) in sum.parameters.iter().enumerate() {
            let e = outcome.estimates[k] - truths[k];
            assert!((p.bias - e).abs() < 1e-15);
            assert!((p.rmse - e.abs()).abs() < 1e-15);
            assert!(p.rmse * p.rmse >= p.bias * p.bias - 1e-15);
        }
        // β₁ error 0.1 > 1.96·0.05, γ₂ error 0.1 > 1.96·0.01
        assert_eq!(sum.parameters[1].coverage, 0.0);
        assert_eq!(sum.parameters[0].coverage, 100.0);
        for t in &sum.terms {
            assert!((t.ma_bias - 0.1).abs() < 1e-12);
            assert!((t.rmise - 0.1).abs() < 1e-12);
            assert_eq!(t.coverage, 100.0);
        }
    }

    #[test]
    fn failed_replicates_are_counted_and_excluded() {
        let s = SimScenario::scenario2(10);
        let bad = ReplicateOutcome {
            index: 1,
            converged: false,
            error: Some("boom".into()),
            estimates: vec![],
            standard_errors: vec![],
            curves: vec![],
            covered: vec![],
        };
        let sum = summarize(&s, vec![bad]);
        assert_eq!(sum.failed, 1);
        assert_eq!(sum.used, 0);
    }

    #[test]
    fn scenario_round_trips_through_toml() {
        let s = SimScenario::scenario1(1500);
        let text = toml::to_string(&s).unwrap();
        assert_eq!(toml::from_str::<SimScenario>(&text).unwrap(), s);
    }

    #[test]
    fn cure_fraction_matches_mean_of_exp_minus_theta() {
        let s = SimScenario::scenario2(20_000);
        let mut rng = replicate_rng(s.seed, 0);
        let units: Vec<UnitCovariates> = (0..s.n).map(|_| UnitCovariates::draw(&mut rng)).collect();
        let mut draw_rng = replicate_rng(s.seed, 1);
        let cured: Vec<f64> = units
            .iter()
            .map(|u| if s.latent_time(u, &mut draw_rng).is_none() { 1.0 } else { 0.0 })
            .collect();
        let p: Vec<f64> = units.iter().map(|u| (-s.predictors(u).0.exp()).exp()).collect();
        let n = s.n as f64;
        let observed = cured.iter().sum::<f64>() / n;
        let expected = p.iter().sum::<f64>() / n;
        let sd = (p.iter().map(|q| q * (1.0 - q)).sum::<f64>()).sqrt() / n;
        assert!((observed - expected).abs() < 3.0 * sd, "{observed} vs {expected}");
    }

    proptest::proptest! {
        #[test]
        fn summaries_obey_error_decomposition(
            seed in 0u64..1000,
            used in 1usize..12,
        ) {
            use rand::Rng;
            let s = SimScenario::scenario2(10);
            let truth = identifiability_centering(&s);
            let mut rng = replicate_rng(seed, 0);
            let outcomes: Vec<ReplicateOutcome> = (0..used)
                .map(|index| ReplicateOutcome {
                    index,
                    converged: true,
                    error: None,
                    estimates: (0..5).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    standard_errors: (0..5).map(|_| rng.random_range(0.01..0.5)).collect(),
                    curves: truth
                        .terms
                        .iter()
                        .map(|_| (0..TERM_GRID_POINTS).map(|_| rng.random_range(-1.0..1.0)).collect())
                        .collect(),
                    covered: truth
                        .terms
                        .iter()
                        .map(|_| (0..TERM_GRID_POINTS).map(|_| rng.random_bool(0.9)).collect())
                        .collect(),
                })
                .collect();
            let sum = summarize(&s, outcomes);
            proptest::prop_assert_eq!(sum.used, used);
            for p in &sum.parameters {
                proptest::prop_assert!(p.rmse * p.rmse >= p.bias * p.bias - 1e-12);
                proptest::prop_assert!((0.0..=100.0).contains(&p.coverage));
            }
            for t in &sum.terms {
                proptest::prop_assert!(t.rmise >= 0.0 && t.ma_bias >= 0.0);
                proptest::prop_assert!((0.0..=100.0).contains(&t.coverage));
            }
        }
    }
}
