//! Promotion-time cure models with time-varying covariates, fitted by
//! Laplace-approximated penalized likelihood with P-splines.

pub mod data;
pub mod estimation;
pub mod linalg;
pub mod model;
pub mod simulate;
pub mod splines;

pub use data::{
    build_design, expand, ingest_csv, AdditiveTerm, CovariatePath, DataError, DesignLayout,
    DesignViews, LinearPrior, ModelSpec, PersonPeriodTable, Submodel, SurvivalRecord,
};
pub use splines::{build_basis, build_penalty, recenter, CenteredBasis, PenaltyMatrix, SplineBasis};
pub use model::{
    BaselineSpec, BaselineState, Discretization, ModelError, ModelFrame, PenaltyState, RegressionState,
};
pub use estimation::{
    credible_bands, fit, fit_statistics, predict, EstimationError, FitConfig, FitResult, FitStatistics,
    PredictionRow,
};
pub use simulate::{generate, generate_table, replicate, ReplicationSummary, SimScenario, SimulationError};
