//! Shared inputs for the benchmarks.

use tvcure::model::{ModelFrame, PenaltyState, RegressionState};
use tvcure::{generate_table, BaselineState, Discretization, PersonPeriodTable, SimScenario};

/// Replicate 0 of the second censoring scenario with `n` units.
pub fn scenario_table(n: usize) -> PersonPeriodTable {
    generate_table(&SimScenario::scenario2(n), 0).expect("valid scenario")
}

/// A frame for the simulation model with a smooth baseline and zero coefficients.
pub fn evaluation_point(n: usize) -> (ModelFrame, BaselineState, RegressionState, PenaltyState) {
    let table = scenario_table(n);
    let frame = ModelFrame::new(&table, &SimScenario::model_spec(), Discretization::Interval).expect("frame");
    let k = frame.baseline.n_basis();
    let phi: Vec<f64> = (0..k).map(|j| -0.05 * (j as f64 - 4.0).powi(2)).collect();
    let base = frame.baseline.state(&phi);
    let reg = RegressionState::zeros(frame.q(), frame.q_tilde());
    let (j, jt) = frame.n_terms();
    let pen = PenaltyState::uniform(j, jt, 10.0);
    (frame, base, reg, pen)
}
