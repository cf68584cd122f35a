//! Explicit backward collocation for the HJB equation:
//! `Ṽ_k = Ṽ_{k+1} + (t_{k+1} − t_k) H(t_{k+1}, x_j, DṼ(t_{k+1}, x_j), D²Ṽ(t_{k+1}, x_j))`,
//! re-interpolating the nodal values after every step.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::hamiltonian::{Hamiltonian, HamiltonianOptions};
use super::system::{KernelEval, KernelSystem};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::problem::ControlProblem;
use crate::simulate::FeedbackPolicy;

/// Which coefficient vectors a solve keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Retention {
    /// `c_0 … c_n`, needed for policy extraction.
    #[default]
    All,
    /// `c_0` only, enough for `Ṽ(0, ·)`.
    InitialOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HjbOptions {
    pub hamiltonian: HamiltonianOptions,
    pub retention: Retention,
}

#[derive(Debug, Clone)]
pub struct KernelValueModel {
    system: Arc<KernelSystem>,
    grid: TimeGrid,
    theta: f64,
    retention: Retention,
    coefficients: Vec<DVector<f64>>,
    max_residual: f64,
}

impl KernelValueModel {
    pub fn system(&self) -> &KernelSystem {
        &self.system
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn retention(&self) -> Retention {
        self.retention
    }

    /// Largest `‖A c_k − Ṽ_k‖∞ / (1 + ‖Ṽ_k‖∞)` over all steps of the solve,
    /// measured against the bare kernel matrix.
    pub fn max_relative_residual(&self) -> f64 {
        self.max_residual
    }

    /// `c_k`, if retained.
    pub fn coefficients(&self, k: usize) -> Option<&DVector<f64>> {
        match self.retention {
            Retention::All => self.coefficients.get(k),
            Retention::InitialOnly if k == 0 => self.coefficients.first(),
            Retention::InitialOnly => None,
        }
    }

    fn coefficients_or_err(&self, k: usize) -> Result<&DVector<f64>> {
        self.coefficients(k).ok_or_else(|| {
            Error::invalid(format!("coefficients for step {k} were not retained by this solve"))
        })
    }

    /// `Ṽ(t_k, x)`.
    pub fn value(&self, k: usize, x: &[f64]) -> Result<f64> {
        Ok(self.system.value(self.coefficients_or_err(k)?, x))
    }

    pub fn eval(&self, k: usize, x: &[f64]) -> Result<KernelEval> {
        Ok(self.system.eval(self.coefficients_or_err(k)?, x))
    }

    pub fn to_record(&self) -> KernelValueModelRecord {
        let c = self.system.collocation();
        KernelValueModelRecord {
            dim: c.dim(),
            nodes: c.nodes().to_vec(),
            alpha: self.system.alpha(),
            nugget: self.system.nugget(),
            nugget_fallback: self.system.nugget_fallback(),
            theta: self.theta,
            grid: self.grid.nodes().to_vec(),
            retention: self.retention,
            max_relative_residual: self.max_residual,
            coefficients: self.coefficients.iter().map(|v| v.iter().copied().collect()).collect(),
        }
    }
}

/// Serialized form of [`KernelValueModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelValueModelRecord {
    pub dim: usize,
    /// Row-major node coordinates.
    pub nodes: Vec<f64>,
    pub alpha: f64,
    pub nugget: f64,
    pub nugget_fallback: bool,
    pub theta: f64,
    pub grid: Vec<f64>,
    pub retention: Retention,
    pub max_relative_residual: f64,
    /// One vector per step (`c_0 … c_n`), or only `c_0`.
    pub coefficients: Vec<Vec<f64>>,
}

pub fn hjb_backward_solve(
    problem: &ControlProblem,
    theta: f64,
    grid: &TimeGrid,
    system: Arc<KernelSystem>,
    options: HjbOptions,
) -> Result<KernelValueModel> {
    let d = problem.dim_state();
    if system.collocation().dim() != d {
        return Err(Error::invalid("collocation dimension differs from the state dimension"));
    }
    let mut ham = Hamiltonian::new(problem, theta, options.hamiltonian)?;
    let n_nodes = system.len();
    let n = grid.steps();
    let ops = system.nodal_operators(!problem.diffusion_model().is_zero());
    let colloc = system.collocation();

    let mut values = DVector::from_fn(n_nodes, |j, _| problem.terminal_cost(colloc.node(j)));
    if let Some(j) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NumericalBlowup {
            step: n,
            detail: format!("terminal cost is not finite at node {j}"),
        });
    }
    let mut coeffs = system.interpolate(&values);
    let relative = |c: &DVector<f64>, v: &DVector<f64>| system.nodal_residual(c, v) / (1.0 + v.amax());
    let mut max_residual = relative(&coeffs, &values);
    let mut kept: Vec<DVector<f64>> = match options.retention {
        Retention::All => Vec::with_capacity(n + 1),
        Retention::InitialOnly => Vec::new(),
    };
    if options.retention == Retention::All {
        kept.push(coeffs.clone());
    }

    let mut p = vec![0.0; d];
    let mut m = vec![0.0; d * d];
    let mut h_vals = DVector::zeros(n_nodes);
    for k in (0..n).rev() {
        let t_next = grid.time(k + 1);
        let grads = &ops.gradient * &coeffs;
        let hess = ops.hessian.as_ref().map(|h| h * &coeffs);
        for j in 0..n_nodes {
            for i in 0..d {
                p[i] = grads[i * n_nodes + j];
            }
            if let Some(hv) = &hess {
                for (q, &(r, c)) in ops.pairs.iter().enumerate() {
                    let v = hv[q * n_nodes + j];
                    m[r * d + c] = v;
                    m[c * d + r] = v;
                }
            }
            h_vals[j] = ham.minimize(t_next, colloc.node(j), &p, &m);
        }
        values.axpy(grid.dt(k), &h_vals, 1.0);
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericalBlowup {
                step: k,
                detail: format!(
                    "nodal value at node {j} is not finite; refine the time step or smooth the terminal cost"
                ),
            });
        }
        coeffs = system.interpolate(&values);
        if coeffs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalBlowup {
                step: k,
                detail: "interpolation coefficients are not finite".into(),
            });
        }
        max_residual = max_residual.max(relative(&coeffs, &values));
        if options.retention == Retention::All {
            kept.push(coeffs.clone());
        }
    }
    match options.retention {
        Retention::All => kept.reverse(),
        Retention::InitialOnly => kept.push(coeffs),
    }
    Ok(KernelValueModel {
        system,
        grid: grid.clone(),
        theta,
        retention: options.retention,
        coefficients: kept,
        max_residual,
    })
}

/// Minimizer of the Hamiltonian with `p`, `M` taken from `Ṽ(t, ·)` at `x`.
pub fn extract_policy(
    model: &KernelValueModel,
    problem: &ControlProblem,
    theta: f64,
    t: f64,
    x: &[f64],
    options: HamiltonianOptions,
) -> Result<Vec<f64>> {
    let k = model.grid.index_of(t)?;
    let e = model.eval(k, x)?;
    let mut ham = Hamiltonian::new(problem, theta, options)?;
    ham.minimize(t, x, &e.gradient, &e.hessian);
    Ok(ham.control().to_vec())
}

/// Feedback policy backed by a solved model. Counts queries that fall outside
/// the collocation box.
pub struct KernelPolicy<'a> {
    model: &'a KernelValueModel,
    problem: &'a ControlProblem,
    options: HamiltonianOptions,
    outside_queries: AtomicUsize,
}

impl<'a> KernelPolicy<'a> {
    pub fn new(model: &'a KernelValueModel, problem: &'a ControlProblem, options: HamiltonianOptions) -> Result<Self> {
        if model.retention != Retention::All {
            return Err(Error::invalid("policy extraction needs every coefficient vector"));
        }
        Hamiltonian::new(problem, model.theta, options)?;
        Ok(Self {
            model,
            problem,
            options,
            outside_queries: AtomicUsize::new(0),
        })
    }

    pub fn outside_queries(&self) -> usize {
        self.outside_queries.load(Ordering::Relaxed)
    }
}

impl FeedbackPolicy for KernelPolicy<'_> {
    fn control(&self, step: usize, t: f64, x: &[f64], u: &mut [f64]) -> Result<()> {
        if step >= self.model.grid.len() || self.model.grid.time(step) != t {
            return Err(Error::invalid(format!(
                "kernel policy queried off its grid (step {step}, t = {t})"
            )));
        }
        let e = self.model.eval(step, x)?;
        if e.outside_box {
            self.outside_queries.fetch_add(1, Ordering::Relaxed);
        }
        let mut ham = Hamiltonian::new(self.problem, self.model.theta, self.options)?;
        ham.minimize(t, x, &e.gradient, &e.hessian);
        u.copy_from_slice(ham.control());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{assemble_kernel_system, build_collocation_grid};
    use crate::problem::ControlSet;

    fn frozen_problem(cost: f64) -> ControlProblem {
        ControlProblem::builder(2, 1, 1)
            .running_cost(move |_, _| cost)
            .control_set(ControlSet::Box {
                lo: vec![0.0],
                hi: vec![0.0],
            })
            .build()
            .unwrap()
    }

    fn system_2d() -> Arc<KernelSystem> {
        let set = build_collocation_grid(&[-1.0, -1.0], &[1.0, 1.0], 4).unwrap();
        Arc::new(assemble_kernel_system(set, 1.0, 0.0).unwrap())
    }

    #[test]
    fn null_problem_stays_zero() {
        let p = frozen_problem(0.0);
        let grid = TimeGrid::uniform(1.0, 20).unwrap();
        let model = hjb_backward_solve(&p, 1.0, &grid, system_2d(), HjbOptions::default()).unwrap();
        for k in 0..=20 {
            assert!(model.coefficients(k).unwrap().iter().all(|v| *v == 0.0));
        }
        let u = extract_policy(&model, &p, 1.0, 0.5, &[0.3, 0.1], Default::default()).unwrap();
        assert_eq!(u, vec![0.0]);
    }

    #[test]
    fn constant_cost_accumulates_linearly() {
        let c = 2.5;
        let p = frozen_problem(c);
        let grid = TimeGrid::uniform(2.0, 40).unwrap();
        let sys = system_2d();
        let model = hjb_backward_solve(&p, 1.0, &grid, sys.clone(), HjbOptions::default()).unwrap();
        for k in [0, 7, 39, 40] {
            let expected = c * (2.0 - grid.time(k));
            for j in 0..sys.len() {
                let v = model.value(k, sys.collocation().node(j)).unwrap();
                assert!((v - expected).abs() < 1e-8 * (1.0 + expected), "k={k} j={j} {v} vs {expected}");
            }
        }
    }

    #[test]
    fn initial_only_retention() {
        let p = frozen_problem(1.0);
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let opts = HjbOptions {
            retention: Retention::InitialOnly,
            ..Default::default()
        };
        let model = hjb_backward_solve(&p, 1.0, &grid, system_2d(), opts).unwrap();
        assert!(model.coefficients(0).is_some());
        assert!(model.coefficients(1).is_none());
        assert!(KernelPolicy::new(&model, &p, Default::default()).is_err());
        let rec = model.to_record();
        assert_eq!(rec.coefficients.len(), 1);
    }

    #[test]
    fn dimension_mismatch() {
        let p = ControlProblem::builder(1, 1, 1).build().unwrap();
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        assert!(hjb_backward_solve(&p, 1.0, &grid, system_2d(), HjbOptions::default()).is_err());
    }
}
