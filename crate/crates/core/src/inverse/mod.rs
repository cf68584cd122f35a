//! Recovering the control-penalty weight `θ` from observed trajectories by
//! driving the empirical optimality gap to its minimum.

mod gap;
mod provider;
mod search;

pub use gap::{identifiability_check, phi_hat, IdentifiabilityReport, PreparedObservations, DEFAULT_TOL_U};
pub use provider::{Backend, InitialValue, ValueProvider};
pub use search::{
    estimate_theta, estimate_theta_prepared, log_spaced, EstimateOptions, FailedEvaluation, SearchMode,
    ThetaEstimate, TracePoint,
};
