//! Experiment configuration, data generation and the trial loop behind
//! `invctl reproduce`.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use invctl_core::inverse::{estimate_theta, EstimateOptions, PreparedObservations, ValueProvider};
use invctl_core::kernel::{
    assemble_kernel_system, build_collocation_grid, hjb_backward_solve, HamiltonianOptions, HjbOptions,
    KernelPolicy, KernelSystem, DEFAULT_SEARCH_RESOLUTION,
};
use invctl_core::lqr::{riccati_solve, LqrSpec};
use invctl_core::obs_io::save_observations;
use invctl_core::problem::InitialState;
use invctl_core::rng::derive_seed;
use invctl_core::simulate::{add_observation_noise, simulate_ensemble, FeedbackPolicy};
use invctl_core::{ControlProblem, Error, ObservationSet, Result, TimeGrid};

use crate::presets::{self, Preset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    /// Exact formulas for `lqr1d`.
    ClosedForm,
    /// Numeric Riccati integration (`lqr1d`).
    Riccati,
    /// Gaussian-kernel HJB collocation (any preset).
    Kernel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSettings {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub points_per_dim: usize,
    pub alpha: f64,
    pub nugget: f64,
    pub search_resolution: usize,
}

impl KernelSettings {
    /// `lqr1d`: 25 nodes on `[−3, 3]`. `sir`: `8³` nodes on
    /// `[0, 1] × [0, 0.5] × [0, 1]`, a box the epidemic dynamics never leave
    /// from physical states.
    pub fn for_preset(preset: Preset) -> Self {
        let (lo, hi, points) = match preset {
            Preset::Lqr1d => (vec![-3.0], vec![3.0], 25),
            Preset::Sir => (vec![0.0, 0.0, 0.0], vec![1.0, 0.5, 1.0], 8),
        };
        Self {
            lo,
            hi,
            points_per_dim: points,
            alpha: 1.0,
            nugget: 0.0,
            search_resolution: DEFAULT_SEARCH_RESOLUTION,
        }
    }

    /// The box `center ± radius` in every coordinate.
    pub fn centered(center: &[f64], radius: f64, points_per_dim: usize) -> Self {
        Self {
            lo: center.iter().map(|c| c - radius).collect(),
            hi: center.iter().map(|c| c + radius).collect(),
            points_per_dim,
            alpha: 1.0,
            nugget: 0.0,
            search_resolution: DEFAULT_SEARCH_RESOLUTION,
        }
    }

    pub fn hamiltonian(&self) -> HamiltonianOptions {
        HamiltonianOptions {
            search_resolution: self.search_resolution,
            force_grid_search: false,
        }
    }

    pub fn assemble(&self) -> Result<Arc<KernelSystem>> {
        let set = build_collocation_grid(&self.lo, &self.hi, self.points_per_dim)?;
        Ok(Arc::new(assemble_kernel_system(set, self.alpha, self.nugget)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub theta_star: f64,
    /// Trajectories per trial.
    pub trajectories: usize,
    /// Time steps on `[0, T]`.
    pub steps: usize,
    pub trials: usize,
    /// Standard deviation of the Gaussian noise added to observed states.
    pub noise: f64,
    pub solver: Solver,
    pub kernel: KernelSettings,
    pub estimate: EstimateOptions,
    pub seed: u64,
    /// Write each trial's observations here as `trial_NNN.csv`.
    pub obs_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Scalar LQR reproduction. Full scale: 10⁴ trajectories, 10³ steps,
    /// 100 trials; desk scale: 10³ trajectories, 200 steps, 10 trials.
    pub fn ex33(full_scale: bool) -> Self {
        let (trajectories, steps, trials) = if full_scale { (10_000, 1000, 100) } else { (1000, 200, 10) };
        Self {
            preset: Preset::Lqr1d,
            theta_star: 1.0,
            trajectories,
            steps,
            trials,
            noise: 0.0,
            solver: Solver::ClosedForm,
            kernel: KernelSettings::for_preset(Preset::Lqr1d),
            estimate: EstimateOptions::default(),
            seed: 33,
            obs_dir: None,
        }
    }

    /// SIR reproduction with 100 noisy copies of the kernel-optimal path.
    /// Full scale: 10⁴ steps, 100 trials; desk scale: 10³ steps, 10 trials.
    pub fn ex34(full_scale: bool) -> Self {
        let (steps, trials) = if full_scale { (10_000, 100) } else { (1000, 10) };
        Self {
            preset: Preset::Sir,
            theta_star: 1.0,
            trajectories: 100,
            steps,
            trials,
            noise: 0.01,
            solver: Solver::Kernel,
            kernel: KernelSettings::for_preset(Preset::Sir),
            estimate: EstimateOptions {
                coarse_points: Some(17),
                ..EstimateOptions::default()
            },
            seed: 34,
            obs_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trajectories == 0 || self.steps == 0 || self.trials == 0 {
            return Err(Error::invalid("trajectories, steps and trials must be positive"));
        }
        if !(self.theta_star > 0.0) || !self.theta_star.is_finite() {
            return Err(Error::invalid(format!("theta_star must be positive, got {}", self.theta_star)));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(Error::invalid(format!("noise must be nonnegative, got {}", self.noise)));
        }
        check_solver(self.preset, self.solver)?;
        if self.solver == Solver::Kernel {
            let d = setup_problem(self.preset).0.dim_state();
            if self.kernel.lo.len() != d || self.kernel.hi.len() != d {
                return Err(Error::invalid(format!(
                    "kernel box has {} coordinates but preset {} has {d} states",
                    self.kernel.lo.len(),
                    self.preset
                )));
            }
        }
        self.estimate.validate()
    }
}

/// Partial configuration read from JSON; present fields replace defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    pub preset: Option<Preset>,
    pub full_scale: Option<bool>,
    pub theta_star: Option<f64>,
    pub trajectories: Option<usize>,
    pub steps: Option<usize>,
    pub trials: Option<usize>,
    pub noise: Option<f64>,
    pub solver: Option<Solver>,
    pub kernel: Option<KernelSettings>,
    pub estimate: Option<EstimateOptions>,
    pub seed: Option<u64>,
    pub obs_dir: Option<PathBuf>,
}

impl ConfigOverrides {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn apply(self, mut cfg: ExperimentConfig) -> ExperimentConfig {
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { cfg.$f = v; } )* };
        }
        take!(theta_star, trajectories, steps, trials, noise, solver, kernel, estimate, seed);
        if self.obs_dir.is_some() {
            cfg.obs_dir = self.obs_dir;
        }
        cfg
    }
}

pub fn check_solver(preset: Preset, solver: Solver) -> Result<()> {
    if preset == Preset::Sir && solver != Solver::Kernel {
        return Err(Error::invalid("the sir preset has no Riccati solution; use the kernel solver"));
    }
    Ok(())
}

pub fn setup_problem(preset: Preset) -> (ControlProblem, Option<LqrSpec>) {
    match preset {
        Preset::Lqr1d => {
            let (p, s) = presets::lqr1d();
            (p, Some(s))
        }
        Preset::Sir => (presets::sir(), None),
    }
}

/// Value provider for estimating on `grid`. Cached backends quantize `θ` to
/// `tol_theta / 10`.
pub fn build_provider(
    preset: Preset,
    solver: Solver,
    kernel: &KernelSettings,
    grid: &TimeGrid,
    tol_theta: f64,
) -> Result<ValueProvider> {
    check_solver(preset, solver)?;
    let (problem, spec) = setup_problem(preset);
    let provider = match solver {
        Solver::ClosedForm => return Ok(ValueProvider::scalar_closed_form()),
        Solver::Riccati => ValueProvider::riccati(spec.expect("lqr preset"), grid.clone())?,
        Solver::Kernel => ValueProvider::kernel(
            problem,
            grid.clone(),
            kernel.assemble()?,
            HjbOptions {
                hamiltonian: kernel.hamiltonian(),
                ..Default::default()
            },
        )?,
    };
    provider.with_quantum(tol_theta / 10.0)
}

/// Clean (noise-free) observations of the preset's optimal policy at `θ`.
pub struct DataSource {
    preset: Preset,
    problem: ControlProblem,
    grid: TimeGrid,
    generator: Generator,
    /// Off-box kernel evaluations while generating, when a kernel policy is used.
    pub outside_box_queries: usize,
    pub nugget: Option<f64>,
    pub nugget_fallback: Option<bool>,
}

enum Generator {
    Policy(Box<dyn FeedbackPolicy + Send>),
    /// Deterministic dynamics from a fixed start: one path, copied.
    Replicate(ObservationSet),
}

impl DataSource {
    pub fn new(preset: Preset, theta: f64, steps: usize, solver: Solver, kernel: &KernelSettings) -> Result<Self> {
        let (problem, spec) = setup_problem(preset);
        let grid = TimeGrid::uniform(problem.horizon(), steps)?;
        match (solver, spec) {
            (Solver::ClosedForm | Solver::Riccati, Some(spec)) => {
                let policy = riccati_solve(&spec, theta, &grid)?.policy();
                Ok(Self {
                    preset,
                    problem,
                    grid,
                    generator: Generator::Policy(Box::new(policy)),
                    outside_box_queries: 0,
                    nugget: None,
                    nugget_fallback: None,
                })
            }
            (Solver::Kernel, _) => {
                let system = kernel.assemble()?;
                let (nugget, fallback) = (system.nugget(), system.nugget_fallback());
                let model = hjb_backward_solve(
                    &problem,
                    theta,
                    &grid,
                    system,
                    HjbOptions {
                        hamiltonian: kernel.hamiltonian(),
                        ..Default::default()
                    },
                )?;
                let policy = KernelPolicy::new(&model, &problem, kernel.hamiltonian())?;
                let deterministic =
                    problem.diffusion_model().is_zero() && matches!(problem.initial_state(), InitialState::Fixed { .. });
                if !deterministic {
                    return Err(Error::UnsupportedStructure(
                        "kernel-policy data generation is implemented for deterministic presets only".into(),
                    ));
                }
                let path = simulate_ensemble(&problem, &policy, &grid, 1, 0)?;
                Ok(Self {
                    preset,
                    outside_box_queries: policy.outside_queries(),
                    problem,
                    grid,
                    generator: Generator::Replicate(path),
                    nugget: Some(nugget),
                    nugget_fallback: Some(fallback),
                })
            }
            _ => Err(Error::invalid("the sir preset has no Riccati solution; use the kernel solver")),
        }
    }

    pub fn problem(&self) -> &ControlProblem {
        &self.problem
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn observe(&self, count: usize, seed: u64) -> Result<ObservationSet> {
        match &self.generator {
            Generator::Policy(policy) => simulate_ensemble(&self.problem, policy.as_ref(), &self.grid, count, seed),
            Generator::Replicate(one) => ObservationSet::new(
                self.preset.name(),
                self.grid.clone(),
                vec![one.trajectories()[0].clone(); count],
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub theta_hat: Option<f64>,
    pub phi_at_estimate: Option<f64>,
    pub evaluations: usize,
    pub converged: bool,
    pub gap_crosses_zero: bool,
    pub mean_control_energy: Option<f64>,
    pub initial_states_outside_box: usize,
    pub failed_evaluations: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub backend: Solver,
    pub nugget: Option<f64>,
    pub nugget_fallback: Option<bool>,
    /// Generator-policy evaluations that left the collocation box.
    pub generator_outside_box_queries: usize,
    pub failed_trials: usize,
    pub trials_with_negative_gap: usize,
}

/// Wall-clock figures; these vary between runs and are left out of
/// [`ExperimentReport::reproducible`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct RunStats {
    pub runtime_seconds: f64,
    pub provider_solves: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    /// `θ̂` of every completed trial, in trial order.
    pub theta_hats: Vec<f64>,
    pub mean: Option<f64>,
    /// Sample standard deviation (`N − 1` denominator).
    pub std_dev: Option<f64>,
    pub trials: Vec<TrialRecord>,
    pub diagnostics: SolverDiagnostics,
    pub run: RunStats,
}

impl ExperimentReport {
    /// The report with run statistics cleared; equal configs give equal values.
    pub fn reproducible(&self) -> Self {
        Self {
            run: RunStats::default(),
            ..self.clone()
        }
    }
}

pub fn mean_and_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(var.sqrt()))
}

pub fn run_reproduction(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let start = Instant::now();
    if let Some(dir) = &config.obs_dir {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }
    let source = DataSource::new(config.preset, config.theta_star, config.steps, config.solver, &config.kernel)?;
    let provider = build_provider(
        config.preset,
        config.solver,
        &config.kernel,
        source.grid(),
        config.estimate.tol_theta,
    )?;

    let trials: Vec<TrialRecord> = (0..config.trials)
        .into_par_iter()
        .map(|trial| {
            let seed = derive_seed(config.seed, trial as u64);
            let mut record = TrialRecord {
                trial,
                seed,
                theta_hat: None,
                phi_at_estimate: None,
                evaluations: 0,
                converged: false,
                gap_crosses_zero: false,
                mean_control_energy: None,
                initial_states_outside_box: 0,
                failed_evaluations: 0,
                error: None,
            };
            if let Err(e) = run_trial(config, &source, &provider, seed, trial, &mut record) {
                record.error = Some(e.to_string());
            }
            record
        })
        .collect();

    let theta_hats: Vec<f64> = trials.iter().filter_map(|t| t.theta_hat).collect();
    let (mean, std_dev) = mean_and_std(&theta_hats);
    Ok(ExperimentReport {
        config: config.clone(),
        theta_hats,
        mean,
        std_dev,
        diagnostics: SolverDiagnostics {
            backend: config.solver,
            nugget: source.nugget,
            nugget_fallback: source.nugget_fallback,
            generator_outside_box_queries: source.outside_box_queries,
            failed_trials: trials.iter().filter(|t| t.error.is_some()).count(),
            trials_with_negative_gap: trials.iter().filter(|t| t.gap_crosses_zero).count(),
        },
        trials,
        run: RunStats {
            runtime_seconds: start.elapsed().as_secs_f64(),
            provider_solves: provider.solves(),
        },
    })
}

fn run_trial(
    config: &ExperimentConfig,
    source: &DataSource,
    provider: &ValueProvider,
    seed: u64,
    trial: usize,
    record: &mut TrialRecord,
) -> Result<()> {
    let clean = source.observe(config.trajectories, derive_seed(seed, 0))?;
    let obs = add_observation_noise(&clean, config.noise, derive_seed(seed, 1))?;
    if let Some(dir) = &config.obs_dir {
        save_observations(&obs, &dir.join(format!("trial_{trial:03}.csv")), Some(seed))?;
    }
    if let Some(system) = provider.kernel_system() {
        let prepared = PreparedObservations::new(&obs, source.problem())?;
        record.initial_states_outside_box = prepared
            .initial_states()
            .filter(|x| !system.collocation().contains(x))
            .count();
    }
    let est = estimate_theta(&obs, source.problem(), provider, &config.estimate)?;
    record.theta_hat = Some(est.theta);
    record.phi_at_estimate = Some(est.phi_at_estimate);
    record.evaluations = est.evaluations;
    record.converged = est.converged;
    record.gap_crosses_zero = est.gap_crosses_zero;
    record.mean_control_energy = Some(est.identifiability.mean_control_energy);
    record.failed_evaluations = est.failures.len();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments() {
        let (m, s) = mean_and_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, Some(2.0));
        assert_eq!(s, Some(1.0));
        assert_eq!(mean_and_std(&[4.0]), (Some(4.0), None));
        assert_eq!(mean_and_std(&[]), (None, None));
    }

    #[test]
    fn sir_rejects_riccati() {
        let mut cfg = ExperimentConfig::ex34(false);
        cfg.solver = Solver::Riccati;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn overrides_replace_fields() {
        let o: ConfigOverrides = serde_json::from_str(r#"{"trials": 3, "noise": 0.1}"#).unwrap();
        let cfg = o.apply(ExperimentConfig::ex33(false));
        assert_eq!(cfg.trials, 3);
        assert_eq!(cfg.noise, 0.1);
        assert_eq!(cfg.trajectories, 1000);
        assert!(serde_json::from_str::<ConfigOverrides>(r#"{"trails": 3}"#).is_err());
    }

    #[test]
    fn tiny_lqr_run_is_deterministic() {
        let cfg = ExperimentConfig {
            trajectories: 200,
            steps: 50,
            trials: 2,
            ..ExperimentConfig::ex33(false)
        };
        let a = run_reproduction(&cfg).unwrap();
        let b = run_reproduction(&cfg).unwrap();
        assert_eq!(a.reproducible(), b.reproducible());
        assert_eq!(a.theta_hats.len(), 2);
        assert!(a.trials.iter().all(|t| t.error.is_none()));
    }
}
