//! Euler–Maruyama simulation on the observation grid, observation noise,
//! and the left-endpoint cost quadrature.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::problem::ControlProblem;
use crate::rng::{self, derive_seed};
use crate::trajectory::{ObservationSet, Trajectory};

/// A feedback law evaluated at grid nodes.
///
/// `step` is the index of `t` in the simulation grid; policies backed by
/// per-node data (Riccati gains, kernel coefficients) use it directly.
pub trait FeedbackPolicy: Sync {
    fn control(&self, step: usize, t: f64, x: &[f64], u: &mut [f64]) -> Result<()>;
}

/// Wraps a plain closure `(t, x, u)` as a policy.
pub struct FnPolicy<F>(pub F);

impl<F> FnPolicy<F>
where
    F: Fn(f64, &[f64], &mut [f64]) + Sync,
{
    pub fn new(f: F) -> Self {
        Self(f)
    }
}

impl<F> FeedbackPolicy for FnPolicy<F>
where
    F: Fn(f64, &[f64], &mut [f64]) + Sync,
{
    fn control(&self, _step: usize, t: f64, x: &[f64], u: &mut [f64]) -> Result<()> {
        (self.0)(t, x, u);
        Ok(())
    }
}

/// Simulates one path. Random draws come from `seed` in a fixed order: the
/// initial state first (if random), then `m` increments per step. Problems
/// with zero diffusion draw no increments.
pub fn simulate_trajectory(
    problem: &ControlProblem,
    policy: &dyn FeedbackPolicy,
    grid: &TimeGrid,
    seed: u64,
) -> Result<Trajectory> {
    let (d, k, m) = (problem.dim_state(), problem.dim_control(), problem.dim_noise());
    let nodes = grid.len();
    let mut rng = rng::stream(seed);
    let mut states = vec![0.0; nodes * d];
    let mut controls = vec![0.0; nodes * k];
    let mut drift = vec![0.0; d];
    let mut gain = vec![0.0; d * k];
    let mut sigma = vec![0.0; d * m];
    let mut dw = vec![0.0; m];

    problem.initial_state().sample(&mut rng, &mut states[..d]);
    if let Some(p) = states[..d].iter().position(|v| !v.is_finite()) {
        return Err(Error::NumericalBlowup {
            step: 0,
            detail: format!("initial state component {p} is not finite"),
        });
    }

    for i in 0..nodes {
        let t = grid.time(i);
        let (head, tail) = states.split_at_mut((i + 1) * d);
        let x = &head[i * d..];
        let u = &mut controls[i * k..(i + 1) * k];
        policy.control(i, t, x, u)?;
        if !problem.control_set().contains(u) {
            return Err(Error::invalid(format!(
                "policy returned {u:?} outside the control set at step {i}"
            )));
        }
        if i + 1 == nodes {
            break;
        }
        let dt = grid.dt(i);
        problem.drift(t, x, u, &mut drift, &mut gain);
        let next = &mut tail[..d];
        for ((n, xi), bi) in next.iter_mut().zip(x).zip(&drift) {
            *n = xi + bi * dt;
        }
        if problem.diffusion(t, x, u, &mut sigma) {
            let sdt = dt.sqrt();
            for w in dw.iter_mut() {
                *w = sdt * rng::std_normal(&mut rng);
            }
            for (r, n) in next.iter_mut().enumerate() {
                let row = &sigma[r * m..(r + 1) * m];
                *n += row.iter().zip(&dw).map(|(s, w)| s * w).sum::<f64>();
            }
        }
        if let Some(p) = next.iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericalBlowup {
                step: i + 1,
                detail: format!("state component {p} is not finite at t = {}", grid.time(i + 1)),
            });
        }
    }
    Ok(Trajectory::from_parts_unchecked(grid.clone(), d, k, states, controls))
}

/// `count` independent paths; path `j` uses seed `derive_seed(base_seed, j)`.
/// Assembled in index order, so the result does not depend on scheduling.
pub fn simulate_ensemble(
    problem: &ControlProblem,
    policy: &dyn FeedbackPolicy,
    grid: &TimeGrid,
    count: usize,
    base_seed: u64,
) -> Result<ObservationSet> {
    if count == 0 {
        return Err(Error::invalid("ensemble size must be at least 1"));
    }
    let trajectories = (0..count)
        .into_par_iter()
        .map(|j| {
            simulate_trajectory(problem, policy, grid, derive_seed(base_seed, j as u64))
                .map_err(|e| e.at_trajectory(j))
        })
        .collect::<Result<Vec<_>>>()?;
    ObservationSet::new(problem.tag(), grid.clone(), trajectories)
}

/// Perturbs every state entry by `scale · Z` with independent standard
/// normals `Z`; trajectory `j` draws from `derive_seed(seed, j)` in row-major
/// order. Controls are untouched.
pub fn add_observation_noise(obs: &ObservationSet, scale: f64, seed: u64) -> Result<ObservationSet> {
    if !(scale >= 0.0) || !scale.is_finite() {
        return Err(Error::invalid(format!("noise scale must be nonnegative, got {scale}")));
    }
    let mut noisy = obs.clone();
    if scale == 0.0 {
        return Ok(noisy);
    }
    noisy
        .trajectories_mut()
        .par_iter_mut()
        .enumerate()
        .for_each(|(j, tr)| {
            let mut rng = rng::stream(derive_seed(seed, j as u64));
            for v in tr.states_mut() {
                *v += scale * rng::std_normal(&mut rng);
            }
        });
    Ok(noisy)
}

/// The two θ-independent pieces of the discretized cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostParts {
    /// `g(X_n) + Σ_{i<n} f(t_i, X_i) Δt_i`
    pub state_cost: f64,
    /// `Σ_{i<n} |u_i|² Δt_i`
    pub control_energy: f64,
}

impl CostParts {
    pub fn total(&self, theta: f64) -> f64 {
        self.state_cost + theta * self.control_energy
    }
}

pub fn cost_parts(problem: &ControlProblem, traj: &Trajectory) -> CostParts {
    let grid = traj.grid();
    let mut running = 0.0;
    for i in 0..grid.steps() {
        running += problem.running_cost(grid.time(i), traj.state(i)) * grid.dt(i);
    }
    CostParts {
        state_cost: problem.terminal_cost(traj.final_state()) + running,
        control_energy: traj.control_energy(),
    }
}

/// `g(X_n) + Σ_{i<n} (f(t_i, X_i) + θ|u_i|²)(t_{i+1} − t_i)`.
pub fn discretized_cost(problem: &ControlProblem, traj: &Trajectory, theta: f64) -> Result<f64> {
    if !(theta >= 0.0) || !theta.is_finite() {
        return Err(Error::invalid(format!("theta must be nonnegative, got {theta}")));
    }
    let grid = traj.grid();
    let mut sum = 0.0;
    for i in 0..grid.steps() {
        let u2: f64 = traj.control(i).iter().map(|v| v * v).sum();
        sum += (problem.running_cost(grid.time(i), traj.state(i)) + theta * u2) * grid.dt(i);
    }
    let total = problem.terminal_cost(traj.final_state()) + sum;
    if total.is_finite() {
        Ok(total)
    } else {
        Err(Error::Numerical("discretized cost is not finite".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::InitialState;

    fn zero_policy() -> FnPolicy<impl Fn(f64, &[f64], &mut [f64]) + Sync> {
        FnPolicy::new(|_, _, u| u.fill(0.0))
    }

    #[test]
    fn zero_dynamics_hold_state() {
        let p = ControlProblem::builder(2, 1, 1)
            .initial_state(InitialState::fixed(vec![1.5, -2.0]))
            .build()
            .unwrap();
        let g = TimeGrid::uniform(1.0, 7).unwrap();
        let tr = simulate_trajectory(&p, &zero_policy(), &g, 1).unwrap();
        for i in 0..g.len() {
            assert_eq!(tr.state(i), &[1.5, -2.0]);
        }
    }

    #[test]
    fn constant_drift_is_exact() {
        let p = ControlProblem::builder(1, 1, 1)
            .control_affine_drift(|_, _, b| b[0] = 1.0, |_, _, g| g[0] = 0.0)
            .build()
            .unwrap();
        for n in [1, 3, 10, 1000] {
            let g = TimeGrid::uniform(1.0, n).unwrap();
            let tr = simulate_trajectory(&p, &zero_policy(), &g, 0).unwrap();
            assert!((tr.final_state()[0] - 1.0).abs() < 1e-12, "n = {n}");
        }
    }

    #[test]
    fn blowup_names_step() {
        let p = ControlProblem::builder(1, 1, 1)
            .general_drift(|_, x, _, b| b[0] = x[0] * x[0] * 1e200)
            .initial_state(InitialState::fixed(vec![1e100]))
            .build()
            .unwrap();
        let g = TimeGrid::uniform(1.0, 10).unwrap();
        match simulate_trajectory(&p, &zero_policy(), &g, 0) {
            Err(Error::NumericalBlowup { step, .. }) => assert_eq!(step, 1),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn policy_outside_box_rejected() {
        let p = ControlProblem::builder(1, 1, 1)
            .control_set(crate::problem::ControlSet::unit_interval())
            .build()
            .unwrap();
        let g = TimeGrid::uniform(1.0, 2).unwrap();
        let pol = FnPolicy::new(|_, _, u| u[0] = 2.0);
        assert!(simulate_trajectory(&p, &pol, &g, 0).is_err());
    }

    #[test]
    fn quadrature_examples() {
        let g = TimeGrid::uniform(1.0, 13).unwrap();
        let ones = ControlProblem::builder(1, 1, 1).running_cost(|_, _| 1.0).build().unwrap();
        let tr = Trajectory::new(g.clone(), 1, 1, vec![0.0; 14], vec![0.0; 14]).unwrap();
        assert!((discretized_cost(&ones, &tr, 1.0).unwrap() - 1.0).abs() < 1e-14);

        let terminal = ControlProblem::builder(1, 1, 1).terminal_cost(|x| x[0] * x[0]).build().unwrap();
        let mut xs = vec![0.0; 14];
        xs[13] = 2.0;
        let tr = Trajectory::new(g.clone(), 1, 1, xs, vec![0.0; 14]).unwrap();
        assert_eq!(discretized_cost(&terminal, &tr, 3.0).unwrap(), 4.0);

        let penalty = ControlProblem::builder(1, 1, 1).horizon(2.0).build().unwrap();
        let g2 = TimeGrid::uniform(2.0, 8).unwrap();
        let tr = Trajectory::new(g2, 1, 1, vec![0.0; 9], vec![0.5; 9]).unwrap();
        let got = discretized_cost(&penalty, &tr, 3.0).unwrap();
        assert!((got - 3.0 * 0.25 * 2.0).abs() < 1e-14);
    }

    #[test]
    fn noise_layer_identity_and_rejection() {
        let p = ControlProblem::builder(1, 1, 1)
            .state_diffusion(|_, _, s| s[0] = 1.0)
            .build()
            .unwrap();
        let g = TimeGrid::uniform(1.0, 5).unwrap();
        let obs = simulate_ensemble(&p, &zero_policy(), &g, 3, 9).unwrap();
        assert_eq!(add_observation_noise(&obs, 0.0, 1).unwrap(), obs);
        assert!(add_observation_noise(&obs, -0.1, 1).is_err());
        let noisy = add_observation_noise(&obs, 0.5, 1).unwrap();
        for (a, b) in noisy.trajectories().iter().zip(obs.trajectories()) {
            assert_eq!(a.controls(), b.controls());
            assert_ne!(a.states(), b.states());
        }
    }

    #[test]
    fn singleton_ensemble_matches_direct_simulation() {
        let p = ControlProblem::builder(1, 1, 1)
            .state_diffusion(|_, _, s| s[0] = 1.0)
            .initial_state(InitialState::standard_normal(1))
            .build()
            .unwrap();
        let g = TimeGrid::uniform(1.0, 20).unwrap();
        let obs = simulate_ensemble(&p, &zero_policy(), &g, 1, 77).unwrap();
        let direct = simulate_trajectory(&p, &zero_policy(), &g, derive_seed(77, 0)).unwrap();
        assert_eq!(obs.trajectories()[0], direct);
    }
}
