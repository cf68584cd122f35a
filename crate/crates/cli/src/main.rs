use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use invctl::experiment::{
    build_provider, check_solver, run_reproduction, setup_problem, ConfigOverrides, DataSource, ExperimentConfig,
    KernelSettings, Solver,
};
use invctl::presets::Preset;
use invctl::{exit_code, EXIT_BAD_INPUT, EXIT_NON_IDENTIFIABLE, EXIT_NUMERICAL, EXIT_OK};
use invctl_core::inverse::{estimate_theta, identifiability_check, EstimateOptions, SearchMode, DEFAULT_TOL_U};
use invctl_core::kernel::{hjb_backward_solve, HjbOptions, Retention};
use invctl_core::lqr::riccati_solve;
use invctl_core::obs_io::{load_meta, load_observations, save_observations};
use invctl_core::simulate::add_observation_noise;
use invctl_core::{Error, Result, TimeGrid};

#[derive(Parser)]
#[command(name = "invctl", version, about = "Estimate the control-penalty weight of a stochastic control problem from observed trajectories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a preset under its optimal policy and write observations as CSV.
    Simulate(SimulateArgs),
    /// Solve for the value function at one θ and write it as JSON.
    SolveValue(SolveValueArgs),
    /// Estimate θ from an observation file.
    Estimate(EstimateArgs),
    /// Rerun one of the built-in experiments.
    Reproduce(ReproduceArgs),
    /// Validate an observation file and report its control energy.
    CheckObs(CheckObsArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    ClosedForm,
    Riccati,
    Kernel,
}

impl From<SolverArg> for Solver {
    fn from(s: SolverArg) -> Self {
        match s {
            SolverArg::ClosedForm => Solver::ClosedForm,
            SolverArg::Riccati => Solver::Riccati,
            SolverArg::Kernel => Solver::Kernel,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    /// Minimize the gap itself.
    Vertex,
    /// Minimize the absolute gap.
    Absolute,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentArg {
    Ex33,
    Ex34,
}

fn parse_preset(s: &str) -> std::result::Result<Preset, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Args, Clone)]
struct KernelArgs {
    /// Lower corner of the collocation box, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    box_lo: Option<Vec<f64>>,
    /// Upper corner of the collocation box, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    box_hi: Option<Vec<f64>>,
    /// Nodes per axis of the tensor-product collocation grid.
    #[arg(long)]
    points_per_dim: Option<usize>,
    /// Gaussian shape α in exp(−α|z|²).
    #[arg(long)]
    alpha: Option<f64>,
    /// Diagonal shift added to the kernel matrix.
    #[arg(long)]
    nugget: Option<f64>,
    /// Grid points per control dimension when the Hamiltonian is searched.
    #[arg(long)]
    search_resolution: Option<usize>,
}

impl KernelArgs {
    fn settings(&self, preset: Preset) -> KernelSettings {
        let mut k = KernelSettings::for_preset(preset);
        if let Some(v) = &self.box_lo {
            k.lo = v.clone();
        }
        if let Some(v) = &self.box_hi {
            k.hi = v.clone();
        }
        if let Some(v) = self.points_per_dim {
            k.points_per_dim = v;
        }
        if let Some(v) = self.alpha {
            k.alpha = v;
        }
        if let Some(v) = self.nugget {
            k.nugget = v;
        }
        if let Some(v) = self.search_resolution {
            k.search_resolution = v;
        }
        k
    }
}

fn default_solver(preset: Preset) -> Solver {
    match preset {
        Preset::Lqr1d => Solver::ClosedForm,
        Preset::Sir => Solver::Kernel,
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Built-in problem: `lqr1d` or `sir`.
    #[arg(long, value_parser = parse_preset)]
    preset: Preset,
    /// Control weight used to generate the data.
    #[arg(long, default_value_t = 1.0)]
    theta: f64,
    #[arg(long, default_value_t = 1000)]
    trajectories: usize,
    /// Time steps on [0, T].
    #[arg(long, default_value_t = 200)]
    steps: usize,
    /// Standard deviation of Gaussian noise added to the observed states.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum)]
    solver: Option<SolverArg>,
    #[command(flatten)]
    kernel: KernelArgs,
    /// Destination CSV; the metadata sidecar is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SolveValueArgs {
    /// Built-in problem: `lqr1d` or `sir`.
    #[arg(long, value_parser = parse_preset)]
    preset: Preset,
    #[arg(long, default_value_t = 1.0)]
    theta: f64,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    /// `riccati` (lqr1d only) or `kernel`.
    #[arg(long, value_enum)]
    solver: Option<SolverArg>,
    #[command(flatten)]
    kernel: KernelArgs,
    /// Keep only the coefficients at t = 0.
    #[arg(long)]
    initial_only: bool,
    /// Write JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    /// Observation CSV.
    #[arg(long)]
    obs: PathBuf,
    /// Built-in problem: `lqr1d` or `sir`.
    #[arg(long, value_parser = parse_preset)]
    preset: Preset,
    #[arg(long, value_enum)]
    solver: Option<SolverArg>,
    #[arg(long, default_value_t = 1e-4)]
    theta_min: f64,
    #[arg(long, default_value_t = 10.0)]
    theta_max: f64,
    #[arg(long, default_value_t = 1e-4)]
    tol_theta: f64,
    /// Stop once the absolute gap falls below this.
    #[arg(long, default_value_t = 0.0)]
    tol_phi: f64,
    /// Mean control energy below which θ is not identifiable.
    #[arg(long, default_value_t = DEFAULT_TOL_U)]
    tol_u: f64,
    #[arg(long, value_enum, default_value = "vertex")]
    mode: ModeArg,
    /// Log-spaced scan before the golden-section refinement.
    #[arg(long)]
    coarse_points: Option<usize>,
    #[command(flatten)]
    kernel: KernelArgs,
    /// Write JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReproduceArgs {
    #[arg(value_enum)]
    experiment: ExperimentArg,
    /// JSON file whose fields override the experiment defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Full-size configuration instead of the quick one.
    #[arg(long)]
    full_scale: bool,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    trajectories: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    solver: Option<SolverArg>,
    /// Save each trial's observations here as `trial_NNN.csv`.
    #[arg(long)]
    obs_dir: Option<PathBuf>,
    /// Write JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckObsArgs {
    /// Observation CSV.
    #[arg(long)]
    obs: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TOL_U)]
    tol_u: f64,
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => std::fs::write(path, text + "\n").map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        }),
        None => {
            let mut stdout = std::io::stdout().lock();
            match writeln!(stdout, "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::Io {
                    path: "<stdout>".into(),
                    source: e,
                }),
                _ => Ok(()),
            }
        }
    }
}

fn simulate(args: SimulateArgs) -> Result<i32> {
    let solver = args.solver.map(Solver::from).unwrap_or(default_solver(args.preset));
    check_solver(args.preset, solver)?;
    let source = DataSource::new(args.preset, args.theta, args.steps, solver, &args.kernel.settings(args.preset))?;
    let clean = source.observe(args.trajectories, args.seed)?;
    let obs = add_observation_noise(&clean, args.noise, invctl_core::rng::derive_seed(args.seed, 1))?;
    save_observations(&obs, &args.out, Some(args.seed))?;
    eprintln!(
        "wrote {} trajectories of {} steps to {}",
        obs.len(),
        obs.grid().steps(),
        args.out.display()
    );
    Ok(EXIT_OK)
}

fn solve_value(args: SolveValueArgs) -> Result<i32> {
    let solver = args.solver.map(Solver::from).unwrap_or(match args.preset {
        Preset::Lqr1d => Solver::Riccati,
        Preset::Sir => Solver::Kernel,
    });
    check_solver(args.preset, solver)?;
    let (problem, spec) = setup_problem(args.preset);
    let grid = TimeGrid::uniform(problem.horizon(), args.steps)?;
    match solver {
        Solver::ClosedForm | Solver::Riccati => {
            let sol = riccati_solve(&spec.expect("lqr preset"), args.theta, &grid)?;
            write_json(&sol.to_record(), args.out.as_deref())?;
        }
        Solver::Kernel => {
            let k = args.kernel.settings(args.preset);
            let retention = if args.initial_only {
                Retention::InitialOnly
            } else {
                Retention::All
            };
            let model = hjb_backward_solve(
                &problem,
                args.theta,
                &grid,
                k.assemble()?,
                HjbOptions {
                    hamiltonian: k.hamiltonian(),
                    retention,
                },
            )?;
            if model.system().nugget_fallback() {
                eprintln!("note: kernel matrix needed nugget {:e}", model.system().nugget());
            }
            write_json(&model.to_record(), args.out.as_deref())?;
        }
    }
    Ok(EXIT_OK)
}

fn estimate(args: EstimateArgs) -> Result<i32> {
    let obs = load_observations(&args.obs)?;
    let (problem, _) = setup_problem(args.preset);
    if let Some(meta) = load_meta(&args.obs)? {
        if meta.problem_tag != args.preset.name() {
            eprintln!(
                "warning: observations are tagged `{}` but preset `{}` was requested",
                meta.problem_tag, args.preset
            );
        }
    }
    let solver = args.solver.map(Solver::from).unwrap_or(default_solver(args.preset));
    let options = EstimateOptions {
        theta_min: args.theta_min,
        theta_max: args.theta_max,
        tol_theta: args.tol_theta,
        tol_phi: args.tol_phi,
        tol_u: args.tol_u,
        mode: match args.mode {
            ModeArg::Vertex => SearchMode::GapVertex,
            ModeArg::Absolute => SearchMode::AbsoluteGap,
        },
        coarse_points: args.coarse_points,
        ..Default::default()
    };
    options.validate()?;
    let provider = build_provider(
        args.preset,
        solver,
        &args.kernel.settings(args.preset),
        obs.grid(),
        options.tol_theta,
    )?;
    let est = estimate_theta(&obs, &problem, &provider, &options)?;
    eprintln!(
        "theta = {} (gap {:e}, {} evaluations{})",
        est.theta,
        est.phi_at_estimate,
        est.evaluations,
        if est.gap_crosses_zero { ", gap crosses zero" } else { "" }
    );
    write_json(&est, args.out.as_deref())?;
    Ok(EXIT_OK)
}

fn reproduce(args: ReproduceArgs) -> Result<i32> {
    let file = match &args.config {
        Some(path) => ConfigOverrides::from_file(path)?,
        None => ConfigOverrides::default(),
    };
    let full_scale = args.full_scale || file.full_scale.unwrap_or(false);
    let base = match args.experiment {
        ExperimentArg::Ex33 => ExperimentConfig::ex33(full_scale),
        ExperimentArg::Ex34 => ExperimentConfig::ex34(full_scale),
    };
    if let Some(p) = file.preset {
        if p != base.preset {
            return Err(Error::invalid(format!(
                "config preset `{p}` does not match experiment preset `{}`",
                base.preset
            )));
        }
    }
    let mut cfg = file.apply(base);
    if let Some(v) = args.trials {
        cfg.trials = v;
    }
    if let Some(v) = args.trajectories {
        cfg.trajectories = v;
    }
    if let Some(v) = args.steps {
        cfg.steps = v;
    }
    if let Some(v) = args.noise {
        cfg.noise = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.solver {
        cfg.solver = v.into();
    }
    if args.obs_dir.is_some() {
        cfg.obs_dir = args.obs_dir;
    }
    let report = run_reproduction(&cfg)?;
    match (report.mean, report.std_dev) {
        (Some(m), Some(s)) => eprintln!(
            "{} trials: mean theta {m:.6}, std {s:.6} ({:.1} s)",
            report.theta_hats.len(),
            report.run.runtime_seconds
        ),
        (Some(m), None) => eprintln!("1 trial: theta {m:.6} ({:.1} s)", report.run.runtime_seconds),
        _ => eprintln!("no trial completed"),
    }
    write_json(&report, args.out.as_deref())?;
    Ok(if report.theta_hats.is_empty() { EXIT_NUMERICAL } else { EXIT_OK })
}

fn check_obs(args: CheckObsArgs) -> Result<i32> {
    let obs = load_observations(&args.obs)?;
    let report = identifiability_check(&obs, args.tol_u);
    println!(
        "{}: {} trajectories, {} states, {} controls, {} steps on [0, {}]",
        args.obs.display(),
        obs.len(),
        obs.dim_state(),
        obs.dim_control(),
        obs.grid().steps(),
        obs.grid().horizon()
    );
    println!(
        "mean control energy {:e} ({})",
        report.mean_control_energy,
        if report.identifiable { "identifiable" } else { "NOT identifiable" }
    );
    Ok(if report.identifiable { EXIT_OK } else { EXIT_NON_IDENTIFIABLE })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_BAD_INPUT as u8 } else { EXIT_OK as u8 });
        }
    };
    let outcome = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::SolveValue(a) => solve_value(a),
        Command::Estimate(a) => estimate(a),
        Command::Reproduce(a) => reproduce(a),
        Command::CheckObs(a) => check_obs(a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
