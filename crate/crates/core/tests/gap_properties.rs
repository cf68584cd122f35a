use std::sync::OnceLock;

use proptest::prelude::*;
use rand::seq::SliceRandom;

use invctl_core::inverse::{
    estimate_theta, identifiability_check, phi_hat, EstimateOptions, PreparedObservations, ValueProvider,
};
use invctl_core::lqr::{riccati_solve, LqrSpec};
use invctl_core::rng;
use invctl_core::simulate::simulate_ensemble;
use invctl_core::{ControlProblem, InitialState, ObservationSet, TimeGrid, Trajectory};

fn lqr_data() -> &'static (ControlProblem, ObservationSet) {
    static DATA: OnceLock<(ControlProblem, ObservationSet)> = OnceLock::new();
    DATA.get_or_init(|| {
        let spec = LqrSpec::scalar_example();
        let problem = spec.to_problem(InitialState::standard_normal(1)).unwrap();
        let grid = TimeGrid::uniform(1.0, 200).unwrap();
        let policy = riccati_solve(&spec, 1.0, &grid).unwrap().policy();
        let obs = simulate_ensemble(&problem, &policy, &grid, 400, 11).unwrap();
        (problem, obs)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gap_splits_into_state_energy_and_value(theta in 1e-3..20.0f64) {
        let (problem, obs) = lqr_data();
        let provider = ValueProvider::scalar_closed_form();
        let prepared = PreparedObservations::new(obs, problem).unwrap();
        let phi = phi_hat(obs, problem, &provider, theta).unwrap();
        let split = prepared.mean_state_cost() + theta * prepared.mean_energy()
            - prepared.mean_initial_value(&provider, theta).unwrap();
        prop_assert!((phi - split).abs() <= 1e-12 * (1.0 + phi.abs() + split.abs()));
    }

    #[test]
    fn gap_is_convex(lo in 0.05..3.0f64, step in 0.01..1.0f64) {
        let (problem, obs) = lqr_data();
        let provider = ValueProvider::scalar_closed_form();
        let prepared = PreparedObservations::new(obs, problem).unwrap();
        let g = |t: f64| prepared.gap(&provider, t).unwrap();
        let (a, b, c) = (g(lo), g(lo + step), g(lo + 2.0 * step));
        prop_assert!(a + c - 2.0 * b >= -1e-10 * (1.0 + a.abs() + c.abs()));
    }

    #[test]
    fn energy_scales_quadratically(c in 0.0..5.0f64) {
        let (_, obs) = lqr_data();
        let scaled = ObservationSet::new(
            obs.problem_tag(),
            obs.grid().clone(),
            obs.trajectories()
                .iter()
                .map(|tr| {
                    let u = tr.controls().iter().map(|v| c * v).collect();
                    Trajectory::new(obs.grid().clone(), 1, 1, tr.states().to_vec(), u).unwrap()
                })
                .collect(),
        )
        .unwrap();
        let base = identifiability_check(obs, 1e-8).mean_control_energy;
        let report = identifiability_check(&scaled, 1e-8);
        prop_assert!((report.mean_control_energy - c * c * base).abs() <= 1e-12 * (1.0 + base) * (1.0 + c * c));
        prop_assert_eq!(report.identifiable, report.mean_control_energy > 1e-8);
    }
}

#[test]
fn estimate_ignores_trajectory_order() {
    let (problem, obs) = lqr_data();
    let opts = EstimateOptions::default();
    let reference = estimate_theta(obs, problem, &ValueProvider::scalar_closed_form(), &opts).unwrap();
    let mut order: Vec<usize> = (0..obs.len()).collect();
    let mut r = rng::stream(5);
    for _ in 0..3 {
        order.shuffle(&mut r);
        let shuffled = obs.permuted(&order).unwrap();
        let est = estimate_theta(&shuffled, problem, &ValueProvider::scalar_closed_form(), &opts).unwrap();
        assert_eq!(est.theta.to_bits(), reference.theta.to_bits());
        assert_eq!(est.phi_at_estimate.to_bits(), reference.phi_at_estimate.to_bits());
    }
}

#[test]
fn estimate_is_reproducible_across_runs() {
    let (problem, obs) = lqr_data();
    let opts = EstimateOptions::default();
    let a = estimate_theta(obs, problem, &ValueProvider::scalar_closed_form(), &opts).unwrap();
    let b = estimate_theta(obs, problem, &ValueProvider::scalar_closed_form(), &opts).unwrap();
    assert_eq!(a.theta.to_bits(), b.theta.to_bits());
    assert_eq!(a.evaluations, b.evaluations);
    assert!((a.theta - 1.0).abs() < 0.1, "{}", a.theta);
}
