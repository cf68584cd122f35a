use proptest::prelude::*;

use invctl_core::inverse::{estimate_theta, EstimateOptions, ValueProvider};
use invctl_core::lqr::{riccati_solve, LqrSpec};
use invctl_core::obs_io::{load_observations, save_observations};
use invctl_core::simulate::{add_observation_noise, simulate_ensemble, simulate_trajectory, FnPolicy};
use invctl_core::rng::derive_seed;
use invctl_core::{ControlProblem, ControlSet, InitialState, ObservationSet, TimeGrid, Trajectory};

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

fn brownian(sigma: f64) -> ControlProblem {
    ControlProblem::builder(1, 1, 1)
        .tag("brownian")
        .control_affine_drift(|_, _, b| b[0] = 0.0, |_, _, g| g[0] = 0.0)
        .state_diffusion(move |_, _, s| s[0] = sigma)
        .running_cost(|_, _| 0.0)
        .control_set(ControlSet::Unbounded)
        .horizon(2.0)
        .initial_state(InitialState::fixed(vec![0.0]))
        .build()
        .unwrap()
}

#[test]
fn brownian_endpoint_has_linear_variance() {
    let sigma = 0.5;
    let problem = brownian(sigma);
    let grid = TimeGrid::uniform(2.0, 50).unwrap();
    let n = 20_000;
    let obs = simulate_ensemble(&problem, &FnPolicy::new(|_, _, u| u[0] = 0.0), &grid, n, 3).unwrap();
    for i in [10, 25, 50] {
        let xs: Vec<f64> = obs.trajectories().iter().map(|tr| tr.state(i)[0]).collect();
        let (mean, var) = mean_var(&xs);
        let expected = sigma * sigma * grid.time(i);
        assert!(mean.abs() < 4.0 * (expected / n as f64).sqrt(), "step {i}: mean {mean}");
        let se = expected * (2.0 / (n as f64 - 1.0)).sqrt();
        assert!((var - expected).abs() < 4.0 * se, "step {i}: var {var} vs {expected}");
    }
}

#[test]
fn observation_noise_has_requested_scale() {
    let grid = TimeGrid::uniform(1.0, 99).unwrap();
    let trajectories = (0..100)
        .map(|_| Trajectory::new(grid.clone(), 3, 1, vec![0.0; 300], vec![0.5; 100]).unwrap())
        .collect();
    let clean = ObservationSet::new("zeros", grid, trajectories).unwrap();
    let scale = 0.3;
    let noisy = add_observation_noise(&clean, scale, 17).unwrap();
    let all: Vec<f64> = noisy.trajectories().iter().flat_map(|tr| tr.states().to_vec()).collect();
    let (mean, var) = mean_var(&all);
    let n = all.len() as f64;
    assert!(mean.abs() < 4.0 * scale / n.sqrt(), "{mean}");
    let se = scale * scale * (2.0 / (n - 1.0)).sqrt();
    assert!((var - scale * scale).abs() < 4.0 * se, "{var}");
    assert!(noisy.trajectories().iter().all(|tr| tr.controls().iter().all(|&u| u == 0.5)));
}

#[test]
fn ensemble_matches_one_by_one_simulation() {
    let spec = LqrSpec::scalar_example();
    let problem = spec.to_problem(InitialState::standard_normal(1)).unwrap();
    let grid = TimeGrid::uniform(1.0, 100).unwrap();
    let policy = riccati_solve(&spec, 1.0, &grid).unwrap().policy();
    let obs = simulate_ensemble(&problem, &policy, &grid, 64, 99).unwrap();
    for (j, tr) in obs.trajectories().iter().enumerate() {
        let single = simulate_trajectory(&problem, &policy, &grid, derive_seed(99, j as u64)).unwrap();
        assert_eq!(tr, &single, "trajectory {j}");
    }
    let other = simulate_ensemble(&problem, &policy, &grid, 64, 100).unwrap();
    assert_ne!(obs.trajectories()[0], other.trajectories()[0]);
}

#[test]
fn reloaded_observations_give_identical_estimate() {
    let spec = LqrSpec::scalar_example();
    let problem = spec.to_problem(InitialState::standard_normal(1)).unwrap();
    let grid = TimeGrid::uniform(1.0, 200).unwrap();
    let policy = riccati_solve(&spec, 1.0, &grid).unwrap().policy();
    let obs = simulate_ensemble(&problem, &policy, &grid, 500, 21).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lqr.csv");
    save_observations(&obs, &path, Some(21)).unwrap();
    let back = load_observations(&path).unwrap();
    assert_eq!(back, obs);
    let opts = EstimateOptions::default();
    let a = estimate_theta(&obs, &problem, &ValueProvider::scalar_closed_form(), &opts).unwrap();
    let b = estimate_theta(&back, &problem, &ValueProvider::scalar_closed_form(), &opts).unwrap();
    assert_eq!(a.theta.to_bits(), b.theta.to_bits());
}

fn any_value() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e6..1e6f64,
        -1e-300..1e-300f64,
        Just(0.0),
        Just(-0.0),
        Just(f64::MIN_POSITIVE),
        Just(1.0 / 3.0),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn csv_round_trip_is_bitwise(
        d in 1usize..4,
        k in 1usize..3,
        steps in 1usize..6,
        count in 1usize..4,
        pool in prop::collection::vec(any_value(), 256),
    ) {
        let grid = TimeGrid::uniform(1.5, steps).unwrap();
        let nodes = grid.len();
        let mut it = pool.iter().cycle().copied();
        let trajectories = (0..count)
            .map(|_| {
                let x = (&mut it).take(nodes * d).collect();
                let u = (&mut it).take(nodes * k).collect();
                Trajectory::new(grid.clone(), d, k, x, u).unwrap()
            })
            .collect();
        let obs = ObservationSet::new("random", grid, trajectories).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("obs.csv");
        save_observations(&obs, &path, None).unwrap();
        let back = load_observations(&path).unwrap();
        for (a, b) in obs.trajectories().iter().zip(back.trajectories()) {
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(a.states()), bits(b.states()));
            prop_assert_eq!(bits(a.controls()), bits(b.controls()));
        }
    }
}
