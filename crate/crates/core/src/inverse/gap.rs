use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::provider::ValueProvider;
use crate::error::{Error, Result};
use crate::problem::ControlProblem;
use crate::simulate::cost_parts;
use crate::trajectory::ObservationSet;

pub const DEFAULT_TOL_U: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
struct GapEntry {
    x0: Vec<f64>,
    state_cost: f64,
    energy: f64,
}

/// Observations reduced to what the empirical gap needs: the initial state,
/// the θ-free part of the discretized cost and the control energy of each
/// trajectory.
///
/// Entries are sorted by `(x0, state_cost, energy)` under the IEEE total
/// order, so every sum over them is independent of input row order.
#[derive(Debug, Clone)]
pub struct PreparedObservations {
    dim: usize,
    entries: Vec<GapEntry>,
}

impl PreparedObservations {
    pub fn new(obs: &ObservationSet, problem: &ControlProblem) -> Result<Self> {
        if obs.is_empty() {
            return Err(Error::invalid("observation set is empty"));
        }
        if obs.dim_state() != problem.dim_state() || obs.dim_control() != problem.dim_control() {
            return Err(Error::invalid(format!(
                "observations are {}-state/{}-control but the problem is {}-state/{}-control",
                obs.dim_state(),
                obs.dim_control(),
                problem.dim_state(),
                problem.dim_control()
            )));
        }
        let horizon = obs.grid().horizon();
        if (horizon - problem.horizon()).abs() > 1e-9 * problem.horizon().max(1.0) {
            return Err(Error::invalid(format!(
                "observation horizon {horizon} differs from the problem horizon {}",
                problem.horizon()
            )));
        }
        let mut entries: Vec<GapEntry> = obs
            .trajectories()
            .par_iter()
            .map(|tr| {
                let parts = cost_parts(problem, tr);
                GapEntry {
                    x0: tr.initial_state().to_vec(),
                    state_cost: parts.state_cost,
                    energy: parts.control_energy,
                }
            })
            .collect();
        if let Some(j) = entries
            .iter()
            .position(|e| !e.state_cost.is_finite() || !e.energy.is_finite())
        {
            return Err(Error::Numerical("discretized cost is not finite".into()).at_trajectory(j));
        }
        entries.sort_by(|a, b| {
            a.x0.iter()
                .zip(&b.x0)
                .map(|(p, q)| p.total_cmp(q))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.state_cost.total_cmp(&b.state_cost))
                .then(a.energy.total_cmp(&b.energy))
        });
        Ok(Self {
            dim: problem.dim_state(),
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn initial_states(&self) -> impl Iterator<Item = &[f64]> {
        self.entries.iter().map(|e| e.x0.as_slice())
    }

    /// `(1/N) Σ_j Σ_{i<n} |u_i|² Δt_i`.
    pub fn mean_energy(&self) -> f64 {
        self.entries.iter().map(|e| e.energy).sum::<f64>() / self.len() as f64
    }

    /// `(1/N) Σ_j (g(X_n) + Σ_{i<n} f(t_i, X_i) Δt_i)`.
    pub fn mean_state_cost(&self) -> f64 {
        self.entries.iter().map(|e| e.state_cost).sum::<f64>() / self.len() as f64
    }

    /// `(1/N) Σ_j V(0, X_0^j; θ)`.
    pub fn mean_initial_value(&self, provider: &ValueProvider, theta: f64) -> Result<f64> {
        let v = self.initial_values(provider, theta)?;
        Ok(v.iter().sum::<f64>() / self.len() as f64)
    }

    fn initial_values(&self, provider: &ValueProvider, theta: f64) -> Result<Vec<f64>> {
        let solved = provider.initial_value(theta)?;
        if solved.dim() != self.dim {
            return Err(Error::invalid("value provider dimension differs from the observations"));
        }
        let values: Vec<f64> = self
            .entries
            .par_iter()
            .map(|e| solved.at(&e.x0))
            .collect::<Result<_>>()
            .map_err(|e| e.at_theta(theta))?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("value function is not finite at an initial state".into()).at_theta(theta));
        }
        Ok(values)
    }

    /// Per-trajectory gap `cost_j(θ) − V(0, X_0^j; θ)` in canonical order.
    pub fn gap_terms(&self, provider: &ValueProvider, theta: f64) -> Result<Vec<f64>> {
        let values = self.initial_values(provider, theta)?;
        Ok(self
            .entries
            .iter()
            .zip(values)
            .map(|(e, v)| e.state_cost + theta * e.energy - v)
            .collect())
    }

    /// `Φ̂(θ)`.
    pub fn gap(&self, provider: &ValueProvider, theta: f64) -> Result<f64> {
        Ok(self.gap_terms(provider, theta)?.iter().sum::<f64>() / self.len() as f64)
    }

    /// `Φ̂(θ)` together with the standard error of the mean of its terms.
    pub fn gap_with_error(&self, provider: &ValueProvider, theta: f64) -> Result<(f64, f64)> {
        let terms = self.gap_terms(provider, theta)?;
        let n = terms.len() as f64;
        let mean = terms.iter().sum::<f64>() / n;
        if terms.len() < 2 {
            return Ok((mean, f64::NAN));
        }
        let var = terms.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (n - 1.0);
        Ok((mean, (var / n).sqrt()))
    }
}

/// Empirical optimality gap
/// `Φ̂(θ) = (1/N) Σ_j [g(X_n^j) + Σ_{i<n} (f(t_i, X_i^j) + θ|u_i^j|²) Δt_i − V(0, X_0^j; θ)]`.
pub fn phi_hat(obs: &ObservationSet, problem: &ControlProblem, provider: &ValueProvider, theta: f64) -> Result<f64> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(Error::invalid(format!("theta must be positive, got {theta}")));
    }
    PreparedObservations::new(obs, problem)?.gap(provider, theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityReport {
    pub mean_control_energy: f64,
    pub tolerance: f64,
    pub identifiable: bool,
}

/// A null control is optimal for every penalty weight when the running cost
/// does not reward moving, so observations with (almost) no control energy
/// cannot single out `θ`.
pub fn identifiability_check(obs: &ObservationSet, tol_u: f64) -> IdentifiabilityReport {
    let n = obs.len().max(1) as f64;
    let energy = obs.trajectories().iter().map(|t| t.control_energy()).sum::<f64>() / n;
    IdentifiabilityReport {
        mean_control_energy: energy,
        tolerance: tol_u,
        identifiable: energy >= tol_u,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;
    use crate::lqr::LqrSpec;
    use crate::problem::InitialState;
    use crate::trajectory::Trajectory;

    fn scalar_problem() -> ControlProblem {
        LqrSpec::scalar_example()
            .to_problem(InitialState::standard_normal(1))
            .unwrap()
    }

    #[test]
    fn zero_control_is_not_identifiable() {
        let g = TimeGrid::uniform(1.0, 10).unwrap();
        let tr = Trajectory::new(g.clone(), 1, 1, vec![0.5; 11], vec![0.0; 11]).unwrap();
        let obs = ObservationSet::new("lqr1d", g, vec![tr]).unwrap();
        let r = identifiability_check(&obs, DEFAULT_TOL_U);
        assert_eq!(r.mean_control_energy, 0.0);
        assert!(!r.identifiable);
    }

    #[test]
    fn single_unit_step() {
        let g = TimeGrid::uniform(1.0, 10).unwrap();
        let mut u = vec![0.0; 11];
        u[3] = 1.0;
        let tr = Trajectory::new(g.clone(), 1, 1, vec![0.0; 11], u).unwrap();
        let obs = ObservationSet::new("lqr1d", g, vec![tr]).unwrap();
        let r = identifiability_check(&obs, DEFAULT_TOL_U);
        assert!((r.mean_control_energy - 0.1).abs() < 1e-15);
        assert!(r.identifiable);
    }

    #[test]
    fn gap_vanishes_when_cost_equals_value() {
        // Zero state and control: cost is 0, V(0, 0; θ) = G(0; θ).
        let g = TimeGrid::uniform(1.0, 10).unwrap();
        let tr = Trajectory::new(g.clone(), 1, 1, vec![0.0; 11], vec![0.0; 11]).unwrap();
        let obs = ObservationSet::new("lqr1d", g, vec![tr]).unwrap();
        let p = ValueProvider::scalar_closed_form();
        let phi = phi_hat(&obs, &scalar_problem(), &p, 1.0).unwrap();
        let (_, g0) = crate::lqr::scalar_riccati_closed_form(0.0, 1.0).unwrap();
        assert_eq!(phi, -g0);
    }

    #[test]
    fn dimension_and_horizon_checks() {
        let g = TimeGrid::uniform(2.0, 10).unwrap();
        let tr = Trajectory::new(g.clone(), 1, 1, vec![0.0; 11], vec![0.0; 11]).unwrap();
        let obs = ObservationSet::new("lqr1d", g, vec![tr]).unwrap();
        assert!(PreparedObservations::new(&obs, &scalar_problem()).is_err());
    }
}
