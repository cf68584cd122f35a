use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gap::{identifiability_check, IdentifiabilityReport, PreparedObservations, DEFAULT_TOL_U};
use super::provider::{Backend, ValueProvider};
use crate::error::{Error, Result};
use crate::problem::ControlProblem;
use crate::trajectory::ObservationSet;

/// Objective handed to the golden-section search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    /// Minimize `Φ̂(θ)` itself. `Φ̂` is convex in `θ`, so the search is
    /// well posed even when sampling noise pushes its minimum below zero;
    /// when the minimum is nonnegative this agrees with `AbsoluteGap`.
    #[default]
    GapVertex,
    /// Minimize `|Φ̂(θ)|`.
    AbsoluteGap,
}

impl SearchMode {
    fn objective(self, phi: f64) -> f64 {
        match self {
            SearchMode::GapVertex => phi,
            SearchMode::AbsoluteGap => phi.abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimateOptions {
    pub theta_min: f64,
    pub theta_max: f64,
    /// Stop once the bracket is narrower than `tol_theta · max(1, θ)`.
    pub tol_theta: f64,
    /// Stop once `|Φ̂| < tol_phi`.
    pub tol_phi: f64,
    /// Identifiability threshold on the mean control energy.
    pub tol_u: f64,
    pub mode: SearchMode,
    /// Scan this many log-spaced points first and refine around the best.
    pub coarse_points: Option<usize>,
    pub max_evaluations: usize,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            theta_min: 1e-4,
            theta_max: 10.0,
            tol_theta: 1e-4,
            tol_phi: 0.0,
            tol_u: DEFAULT_TOL_U,
            mode: SearchMode::GapVertex,
            coarse_points: None,
            max_evaluations: 500,
        }
    }
}

impl EstimateOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta_min > 0.0 && self.theta_min < self.theta_max && self.theta_max.is_finite()) {
            return Err(Error::invalid(format!(
                "bracket must satisfy 0 < theta_min < theta_max, got [{}, {}]",
                self.theta_min, self.theta_max
            )));
        }
        if !(self.tol_theta > 0.0) || !(self.tol_phi >= 0.0) || !(self.tol_u >= 0.0) {
            return Err(Error::invalid("tolerances must be positive (tol_phi, tol_u may be zero)"));
        }
        if matches!(self.coarse_points, Some(m) if m < 3) {
            return Err(Error::invalid("a coarse scan needs at least three points"));
        }
        if self.max_evaluations < 2 {
            return Err(Error::invalid("max_evaluations must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub theta: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedEvaluation {
    pub theta: f64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaEstimate {
    pub theta: f64,
    pub phi_at_estimate: f64,
    pub bracket: [f64; 2],
    /// Golden-section bracket when the search stopped.
    pub final_bracket: [f64; 2],
    pub evaluations: usize,
    pub converged: bool,
    pub mode: SearchMode,
    pub backend: Backend,
    /// Some evaluated `Φ̂` was negative; sampling noise exceeds the gap.
    pub gap_crosses_zero: bool,
    pub identifiability: IdentifiabilityReport,
    pub provider_solves: usize,
    pub trace: Vec<TracePoint>,
    pub failures: Vec<FailedEvaluation>,
}

struct Evaluator<'a> {
    prepared: &'a PreparedObservations,
    provider: &'a ValueProvider,
    mode: SearchMode,
    trace: Vec<TracePoint>,
    failures: Vec<FailedEvaluation>,
    first_error: Option<Error>,
}

impl Evaluator<'_> {
    fn record(&mut self, theta: f64, outcome: Result<f64>) -> f64 {
        match outcome {
            Ok(phi) if phi.is_finite() => {
                self.trace.push(TracePoint { theta, phi });
                self.mode.objective(phi)
            }
            Ok(phi) => self.fail(theta, Error::Numerical(format!("gap evaluated to {phi}")).at_theta(theta)),
            Err(e) => self.fail(theta, e),
        }
    }

    fn fail(&mut self, theta: f64, e: Error) -> f64 {
        self.failures.push(FailedEvaluation {
            theta,
            error: e.to_string(),
        });
        self.first_error.get_or_insert(e);
        f64::INFINITY
    }

    fn eval(&mut self, theta: f64) -> f64 {
        let r = self.prepared.gap(self.provider, theta);
        self.record(theta, r)
    }

    fn evaluations(&self) -> usize {
        self.trace.len() + self.failures.len()
    }

    fn hit_tolerance(&self, tol_phi: f64) -> bool {
        self.trace.last().is_some_and(|p| p.phi.abs() < tol_phi)
    }
}

/// `m` points from `lo` to `hi`, equally spaced in `log θ`.
pub fn log_spaced(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..m)
        .map(|i| {
            if i == 0 {
                lo
            } else if i == m - 1 {
                hi
            } else {
                (a + (b - a) * i as f64 / (m - 1) as f64).exp()
            }
        })
        .collect()
}

/// Refuses non-identifiable data, then minimizes the search objective over
/// the bracket by golden-section search.
pub fn estimate_theta(
    obs: &ObservationSet,
    problem: &ControlProblem,
    provider: &ValueProvider,
    options: &EstimateOptions,
) -> Result<ThetaEstimate> {
    options.validate()?;
    let report = identifiability_check(obs, options.tol_u);
    if !report.identifiable {
        return Err(Error::NonIdentifiable {
            energy: report.mean_control_energy,
            tolerance: report.tolerance,
        });
    }
    let prepared = PreparedObservations::new(obs, problem)?;
    search(&prepared, provider, options, report)
}

/// As [`estimate_theta`] for observations already reduced to gap entries.
pub fn estimate_theta_prepared(
    prepared: &PreparedObservations,
    provider: &ValueProvider,
    options: &EstimateOptions,
) -> Result<ThetaEstimate> {
    options.validate()?;
    let energy = prepared.mean_energy();
    let report = IdentifiabilityReport {
        mean_control_energy: energy,
        tolerance: options.tol_u,
        identifiable: energy >= options.tol_u,
    };
    if !report.identifiable {
        return Err(Error::NonIdentifiable {
            energy,
            tolerance: options.tol_u,
        });
    }
    search(prepared, provider, options, report)
}

fn search(
    prepared: &PreparedObservations,
    provider: &ValueProvider,
    options: &EstimateOptions,
    identifiability: IdentifiabilityReport,
) -> Result<ThetaEstimate> {
    let mut ev = Evaluator {
        prepared,
        provider,
        mode: options.mode,
        trace: Vec::new(),
        failures: Vec::new(),
        first_error: None,
    };
    let mut stopped_on_phi = false;

    let (mut a, mut b) = (options.theta_min, options.theta_max);
    if let Some(m) = options.coarse_points {
        let thetas = log_spaced(a, b, m);
        let outcomes: Vec<Result<f64>> = thetas.par_iter().map(|&t| prepared.gap(provider, t)).collect();
        let objectives: Vec<f64> = thetas
            .iter()
            .zip(outcomes)
            .map(|(&t, r)| ev.record(t, r))
            .collect();
        let best = (0..m)
            .min_by(|&i, &j| objectives[i].total_cmp(&objectives[j]))
            .expect("coarse scan is nonempty");
        a = thetas[best.saturating_sub(1)];
        b = thetas[(best + 1).min(m - 1)];
        stopped_on_phi = ev.trace.iter().any(|p| p.phi.abs() < options.tol_phi);
    }

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let narrow = |a: f64, b: f64| b - a < options.tol_theta * f64::max(1.0, 0.5 * (a + b));
    let mut converged = stopped_on_phi || narrow(a, b);
    if !converged {
        let mut fc = ev.eval(c);
        let mut fd = f64::INFINITY;
        if !ev.hit_tolerance(options.tol_phi) {
            fd = ev.eval(d);
        }
        loop {
            if ev.hit_tolerance(options.tol_phi) || narrow(a, b) {
                converged = true;
                break;
            }
            if ev.evaluations() >= options.max_evaluations {
                break;
            }
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - inv_phi * (b - a);
                fc = ev.eval(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + inv_phi * (b - a);
                fd = ev.eval(d);
            }
        }
    }

    let Some(best) = ev
        .trace
        .iter()
        .min_by(|p, q| options.mode.objective(p.phi).total_cmp(&options.mode.objective(q.phi)))
        .copied()
    else {
        return Err(ev
            .first_error
            .unwrap_or_else(|| Error::Numerical("no gap evaluation succeeded".into())));
    };
    Ok(ThetaEstimate {
        theta: best.theta,
        phi_at_estimate: best.phi,
        bracket: [options.theta_min, options.theta_max],
        final_bracket: [a, b],
        evaluations: ev.evaluations(),
        converged,
        mode: options.mode,
        backend: provider.backend(),
        gap_crosses_zero: ev.trace.iter().any(|p| p.phi < 0.0),
        identifiability,
        provider_solves: provider.solves(),
        trace: ev.trace,
        failures: ev.failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;
    use crate::lqr::{riccati_solve, LqrSpec};
    use crate::problem::InitialState;
    use crate::simulate::simulate_ensemble;

    fn lqr_data(n_traj: usize, steps: usize, seed: u64) -> (ControlProblem, ObservationSet) {
        let spec = LqrSpec::scalar_example();
        let problem = spec.to_problem(InitialState::standard_normal(1)).unwrap();
        let grid = TimeGrid::uniform(1.0, steps).unwrap();
        let policy = riccati_solve(&spec, 1.0, &grid).unwrap().policy();
        let obs = simulate_ensemble(&problem, &policy, &grid, n_traj, seed).unwrap();
        (problem, obs)
    }

    #[test]
    fn log_spacing_endpoints() {
        let t = log_spaced(1e-4, 10.0, 6);
        assert_eq!(t[0], 1e-4);
        assert_eq!(t[5], 10.0);
        assert!((t[1] - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_bracket() {
        let o = EstimateOptions {
            theta_min: 2.0,
            theta_max: 1.0,
            ..Default::default()
        };
        assert!(o.validate().is_err());
    }

    #[test]
    fn refuses_null_controls() {
        let (problem, obs) = lqr_data(4, 10, 1);
        let zeroed: Vec<_> = obs
            .trajectories()
            .iter()
            .map(|t| {
                crate::trajectory::Trajectory::new(
                    t.grid().clone(),
                    1,
                    1,
                    t.states().to_vec(),
                    vec![0.0; t.controls().len()],
                )
                .unwrap()
            })
            .collect();
        let obs = ObservationSet::new("lqr1d", obs.grid().clone(), zeroed).unwrap();
        let err = estimate_theta(&obs, &problem, &ValueProvider::scalar_closed_form(), &Default::default())
            .unwrap_err();
        assert!(matches!(err, Error::NonIdentifiable { .. }));
    }

    #[test]
    fn recovers_weight_on_small_sample() {
        let (problem, obs) = lqr_data(500, 200, 11);
        let est = estimate_theta(&obs, &problem, &ValueProvider::scalar_closed_form(), &Default::default()).unwrap();
        assert!((est.theta - 1.0).abs() < 0.05, "{}", est.theta);
        assert!(est.converged);
        assert!(est.final_bracket[0] <= est.theta && est.theta <= est.final_bracket[1] + 1e-12);
        assert!(est.trace.iter().all(|p| p.phi.is_finite()));
        assert_eq!(est.evaluations, est.trace.len());
    }

    #[test]
    fn coarse_scan_agrees_with_plain_search() {
        let (problem, obs) = lqr_data(300, 100, 5);
        let provider = ValueProvider::scalar_closed_form();
        let plain = estimate_theta(&obs, &problem, &provider, &Default::default()).unwrap();
        let coarse = estimate_theta(
            &obs,
            &problem,
            &provider,
            &EstimateOptions {
                coarse_points: Some(13),
                ..Default::default()
            },
        )
        .unwrap();
        assert!((plain.theta - coarse.theta).abs() < 5e-4);
    }
}
