//! Linear-quadratic case: `b = b₀(t)x + b₁(t)u`, `σ = σ₀(t)`,
//! `f = xᵀS(t)x`, `g = xᵀRx`, `U = ℝᵏ`.
//!
//! The value function is `V(t, x) = xᵀF(t)x + G(t)` where
//!
//! ```text
//! dF/dt = −b₀ᵀF − F b₀ + (1/θ) F b₁ b₁ᵀ F − S,   F(T) = R
//! dG/dt = −tr(σ₀ᵀ F σ₀),                          G(T) = 0
//! ```
//!
//! and the optimal feedback is `u = −(1/θ) b₁ᵀ F x`.

use std::borrow::Cow;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::problem::{ControlProblem, InitialState};
use crate::simulate::FeedbackPolicy;

/// A coefficient matrix as a function of time.
#[derive(Clone)]
pub enum MatrixPath {
    Constant(DMatrix<f64>),
    Varying(Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>),
}

impl MatrixPath {
    pub fn varying(f: impl Fn(f64) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        MatrixPath::Varying(Arc::new(f))
    }

    pub fn at(&self, t: f64) -> Cow<'_, DMatrix<f64>> {
        match self {
            MatrixPath::Constant(m) => Cow::Borrowed(m),
            MatrixPath::Varying(f) => Cow::Owned(f(t)),
        }
    }
}

pub const PSD_TOLERANCE: f64 = 1e-10;

#[derive(Clone)]
pub struct LqrSpec {
    pub tag: String,
    pub b0: MatrixPath,
    pub b1: MatrixPath,
    pub sigma0: MatrixPath,
    pub state_weight: MatrixPath,
    pub terminal_weight: DMatrix<f64>,
    pub horizon: f64,
}

impl fmt::Debug for LqrSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LqrSpec")
            .field("tag", &self.tag)
            .field("terminal_weight", &self.terminal_weight)
            .field("horizon", &self.horizon)
            .finish_non_exhaustive()
    }
}

fn constant(m: DMatrix<f64>) -> MatrixPath {
    MatrixPath::Constant(m)
}

impl LqrSpec {
    /// Time-invariant coefficients.
    pub fn constant(
        tag: impl Into<String>,
        b0: DMatrix<f64>,
        b1: DMatrix<f64>,
        sigma0: DMatrix<f64>,
        state_weight: DMatrix<f64>,
        terminal_weight: DMatrix<f64>,
        horizon: f64,
    ) -> Result<Self> {
        let spec = Self {
            tag: tag.into(),
            b0: constant(b0),
            b1: constant(b1),
            sigma0: constant(sigma0),
            state_weight: constant(state_weight),
            terminal_weight,
            horizon,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Scalar dynamics `dX = u dt + 0.1 dW` with cost `10X² + θu²` on `[0, 1]`.
    pub fn scalar_example() -> Self {
        let m = |v: f64| DMatrix::from_element(1, 1, v);
        Self::constant("lqr1d", m(0.0), m(1.0), m(0.1), m(10.0), m(0.0), 1.0)
            .expect("valid constant spec")
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        let b1 = self.b1.at(0.0);
        let s0 = self.sigma0.at(0.0);
        (b1.nrows(), b1.ncols(), s0.ncols())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) {
            return Err(Error::invalid("LQR horizon must be positive"));
        }
        let (d, k, _) = self.dims();
        let b0 = self.b0.at(0.0);
        let s = self.state_weight.at(0.0);
        let s0 = self.sigma0.at(0.0);
        let r = &self.terminal_weight;
        if b0.shape() != (d, d) || s.shape() != (d, d) || r.shape() != (d, d) || s0.nrows() != d || k == 0 {
            return Err(Error::invalid("LQR coefficient shapes are inconsistent"));
        }
        check_psd("R", r)?;
        for t in [0.0, 0.5 * self.horizon, self.horizon] {
            check_psd("S(t)", &self.state_weight.at(t))?;
        }
        Ok(())
    }

    /// The matching forward problem with the given initial law.
    pub fn to_problem(&self, initial: InitialState) -> Result<ControlProblem> {
        let (d, k, m) = self.dims();
        let (b0, b1, s0, sw) = (
            self.b0.clone(),
            self.b1.clone(),
            self.sigma0.clone(),
            self.state_weight.clone(),
        );
        let r = self.terminal_weight.clone();
        ControlProblem::builder(d, k, m)
            .tag(self.tag.clone())
            .control_affine_drift(
                move |t, x, out| {
                    let a = b0.at(t);
                    for (i, o) in out.iter_mut().enumerate() {
                        *o = (0..x.len()).map(|j| a[(i, j)] * x[j]).sum();
                    }
                },
                move |t, _, out| {
                    let b = b1.at(t);
                    for i in 0..b.nrows() {
                        for j in 0..b.ncols() {
                            out[i * b.ncols() + j] = b[(i, j)];
                        }
                    }
                },
            )
            .state_diffusion(move |t, _, out| {
                let s = s0.at(t);
                for i in 0..s.nrows() {
                    for j in 0..s.ncols() {
                        out[i * s.ncols() + j] = s[(i, j)];
                    }
                }
            })
            .running_cost(move |t, x| quad_form(&sw.at(t), x))
            .terminal_cost(move |x| quad_form(&r, x))
            .horizon(self.horizon)
            .initial_state(initial)
            .build()
    }
}

fn quad_form(m: &DMatrix<f64>, x: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..x.len() {
        for j in 0..x.len() {
            acc += x[i] * m[(i, j)] * x[j];
        }
    }
    acc
}

fn check_psd(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if (m - m.transpose()).amax() > 1e-12 * (1.0 + m.amax()) {
        return Err(Error::invalid(format!("{name} must be symmetric")));
    }
    let min = m.clone().symmetric_eigenvalues().min();
    if min < -PSD_TOLERANCE * (1.0 + m.amax()) {
        return Err(Error::invalid(format!(
            "{name} must be positive semidefinite (min eigenvalue {min:e})"
        )));
    }
    Ok(())
}

/// `F(t_i)`, `G(t_i)` on every node of a grid, solved for one `θ`.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    tag: String,
    grid: TimeGrid,
    theta: f64,
    f: Vec<DMatrix<f64>>,
    g: Vec<f64>,
    b1: Vec<DMatrix<f64>>,
}

/// Serialized form of [`RiccatiSolution`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiccatiSolutionRecord {
    pub tag: String,
    pub theta: f64,
    pub grid: Vec<f64>,
    pub dim: usize,
    /// One row-major `d×d` matrix per node.
    pub f: Vec<Vec<f64>>,
    pub g: Vec<f64>,
}

impl RiccatiSolution {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn f(&self, i: usize) -> &DMatrix<f64> {
        &self.f[i]
    }

    pub fn g(&self, i: usize) -> f64 {
        self.g[i]
    }

    pub fn to_record(&self) -> RiccatiSolutionRecord {
        let dim = self.f[0].nrows();
        RiccatiSolutionRecord {
            tag: self.tag.clone(),
            theta: self.theta,
            grid: self.grid.nodes().to_vec(),
            dim,
            f: self
                .f
                .iter()
                .map(|m| (0..dim).flat_map(|i| (0..dim).map(move |j| m[(i, j)])).collect())
                .collect(),
            g: self.g.clone(),
        }
    }

    /// Feedback `u = −(1/θ) b₁ᵀ F x` with gains precomputed per node.
    pub fn policy(&self) -> LqrPolicy {
        let gains = self
            .f
            .iter()
            .zip(&self.b1)
            .map(|(f, b1)| (b1.transpose() * f) / self.theta)
            .collect();
        LqrPolicy {
            grid: self.grid.clone(),
            gains,
        }
    }
}

pub struct LqrPolicy {
    grid: TimeGrid,
    gains: Vec<DMatrix<f64>>,
}

impl FeedbackPolicy for LqrPolicy {
    fn control(&self, step: usize, t: f64, x: &[f64], u: &mut [f64]) -> Result<()> {
        if step >= self.grid.len() || self.grid.time(step) != t {
            return Err(Error::invalid(format!(
                "LQR policy queried off its grid (step {step}, t = {t})"
            )));
        }
        let k = &self.gains[step];
        for (r, ur) in u.iter_mut().enumerate() {
            *ur = -(0..x.len()).map(|c| k[(r, c)] * x[c]).sum::<f64>();
        }
        Ok(())
    }
}

/// Backward classical RK4 on each grid interval, symmetrizing `F` after
/// every step.
pub fn riccati_solve(spec: &LqrSpec, theta: f64, grid: &TimeGrid) -> Result<RiccatiSolution> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(Error::invalid(format!("theta must be positive, got {theta}")));
    }
    if (grid.horizon() - spec.horizon).abs() > 1e-12 * spec.horizon {
        return Err(Error::invalid("grid horizon differs from the LQR horizon"));
    }
    spec.validate()?;
    let n = grid.steps();
    let inv_theta = 1.0 / theta;

    let rhs = |t: f64, f: &DMatrix<f64>| -> (DMatrix<f64>, f64) {
        let b0 = spec.b0.at(t);
        let b1 = spec.b1.at(t);
        let s0 = spec.sigma0.at(t);
        let fb1 = f * &*b1;
        let df = -(b0.transpose() * f) - f * &*b0 + (&fb1 * fb1.transpose()) * inv_theta
            - &*spec.state_weight.at(t);
        let dg = -(s0.transpose() * f * &*s0).trace();
        (df, dg)
    };

    let mut fs = vec![DMatrix::zeros(0, 0); n + 1];
    let mut gs = vec![0.0; n + 1];
    fs[n] = spec.terminal_weight.clone();
    gs[n] = 0.0;
    for i in (0..n).rev() {
        let t1 = grid.time(i + 1);
        let h = -(grid.time(i + 1) - grid.time(i));
        let f1 = &fs[i + 1];
        let (k1, l1) = rhs(t1, f1);
        let (k2, l2) = rhs(t1 + 0.5 * h, &(f1 + &k1 * (0.5 * h)));
        let (k3, l3) = rhs(t1 + 0.5 * h, &(f1 + &k2 * (0.5 * h)));
        let (k4, l4) = rhs(grid.time(i), &(f1 + &k3 * h));
        let mut next = f1 + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        next = (&next + next.transpose()) * 0.5;
        let g = gs[i + 1] + (l1 + 2.0 * l2 + 2.0 * l3 + l4) * (h / 6.0);
        if next.iter().any(|v| !v.is_finite()) || !g.is_finite() {
            return Err(Error::NumericalBlowup {
                step: i,
                detail: "Riccati solution is not finite; check that S and R are PSD".into(),
            });
        }
        fs[i] = next;
        gs[i] = g;
    }
    let b1 = grid.nodes().iter().map(|&t| spec.b1.at(t).into_owned()).collect();
    Ok(RiccatiSolution {
        tag: spec.tag.clone(),
        grid: grid.clone(),
        theta,
        f: fs,
        g: gs,
        b1,
    })
}

/// Closed-form `(F, G)` for [`LqrSpec::scalar_example`]:
/// `F = √(10θ) tanh((1−t)√(10/θ))`, `G = (θ/100) log cosh((1−t)√(10/θ))`.
pub fn scalar_riccati_closed_form(t: f64, theta: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("t must lie in [0, 1], got {t}")));
    }
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(Error::invalid(format!("theta must be positive, got {theta}")));
    }
    let a = (1.0 - t) * (10.0 / theta).sqrt();
    Ok(((10.0 * theta).sqrt() * a.tanh(), theta / 100.0 * log_cosh(a)))
}

/// `log(cosh(a))` without overflow for large `a`.
fn log_cosh(a: f64) -> f64 {
    let a = a.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

pub fn lqr_value(sol: &RiccatiSolution, t: f64, x: &[f64]) -> Result<f64> {
    let i = sol.grid.index_of(t)?;
    let f = &sol.f[i];
    if x.len() != f.nrows() {
        return Err(Error::invalid("state dimension does not match the Riccati solution"));
    }
    Ok(quad_form(f, x) + sol.g[i])
}

pub fn lqr_feedback(sol: &RiccatiSolution, theta: f64, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    if theta != sol.theta {
        return Err(Error::invalid(format!(
            "feedback requested for theta = {theta} but the solution was computed for {}",
            sol.theta
        )));
    }
    let i = sol.grid.index_of(t)?;
    if x.len() != sol.f[i].nrows() {
        return Err(Error::invalid("state dimension does not match the Riccati solution"));
    }
    let xv = DVector::from_column_slice(x);
    let u = -(sol.b1[i].transpose() * &sol.f[i] * xv) / theta;
    Ok(u.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn m(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn closed_form_values() {
        let (f, g) = scalar_riccati_closed_form(1.0, 2.3).unwrap();
        assert_eq!((f, g), (0.0, 0.0));
        let (f, g) = scalar_riccati_closed_form(0.0, 1.0).unwrap();
        let s10 = 10f64.sqrt();
        assert_relative_eq!(f, s10 * s10.tanh(), max_relative = 1e-15);
        assert_relative_eq!(f, 3.1510, epsilon = 5e-5);
        assert_relative_eq!(g, 0.01 * s10.cosh().ln(), max_relative = 1e-13);
        assert_relative_eq!(g, 0.024709, epsilon = 5e-7);
        let (f, _) = scalar_riccati_closed_form(0.5, 1.0).unwrap();
        assert_relative_eq!(f, s10 * (s10 / 2.0).tanh(), max_relative = 1e-15);
        assert!(scalar_riccati_closed_form(1.5, 1.0).is_err());
        assert!(scalar_riccati_closed_form(-0.1, 1.0).is_err());
    }

    #[test]
    fn numeric_matches_closed_form() {
        let grid = TimeGrid::uniform(1.0, 1000).unwrap();
        let sol = riccati_solve(&LqrSpec::scalar_example(), 1.0, &grid).unwrap();
        let (f0, g0) = scalar_riccati_closed_form(0.0, 1.0).unwrap();
        assert_relative_eq!(sol.f(0)[(0, 0)], f0, epsilon = 1e-6);
        assert_relative_eq!(sol.g(0), g0, epsilon = 1e-8);
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let spec = LqrSpec::constant("z", m(0.3), m(1.0), m(0.7), m(0.0), m(0.0), 1.0).unwrap();
        let grid = TimeGrid::uniform(1.0, 50).unwrap();
        for theta in [0.1, 1.0, 7.0] {
            let sol = riccati_solve(&spec, theta, &grid).unwrap();
            for i in 0..grid.len() {
                assert_eq!(sol.f(i)[(0, 0)], 0.0);
                assert_eq!(sol.g(i), 0.0);
            }
        }
    }

    #[test]
    fn uncontrolled_linear_growth() {
        let spec = LqrSpec::constant("lin", m(0.0), m(0.0), m(0.0), m(1.0), m(0.0), 1.0).unwrap();
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let sol = riccati_solve(&spec, 1.0, &grid).unwrap();
        for i in 0..grid.len() {
            assert_relative_eq!(sol.f(i)[(0, 0)], 1.0 - grid.time(i), epsilon = 1e-14);
        }
    }

    #[test]
    fn value_and_feedback() {
        let grid = TimeGrid::uniform(1.0, 1000).unwrap();
        let sol = riccati_solve(&LqrSpec::scalar_example(), 1.0, &grid).unwrap();
        assert_eq!(lqr_value(&sol, 0.3, &[0.0]).unwrap(), sol.g(300));
        assert_eq!(lqr_value(&sol, 1.0, &[2.0]).unwrap(), 0.0);
        assert_relative_eq!(lqr_value(&sol, 0.0, &[1.0]).unwrap(), 3.1757, epsilon = 1e-4);
        assert!(lqr_value(&sol, 0.0005, &[1.0]).is_err());

        assert_eq!(lqr_feedback(&sol, 1.0, 0.0, &[0.0]).unwrap(), vec![0.0]);
        let u1 = lqr_feedback(&sol, 1.0, 0.0, &[1.0]).unwrap()[0];
        let s10 = 10f64.sqrt();
        assert_relative_eq!(u1, -s10 * s10.tanh(), epsilon = 1e-6);
        let u2 = lqr_feedback(&sol, 1.0, 0.0, &[2.0]).unwrap()[0];
        assert_relative_eq!(u2, 2.0 * u1, max_relative = 1e-15);
        assert!(lqr_feedback(&sol, 2.0, 0.0, &[1.0]).is_err());
    }

    #[test]
    fn rejects_indefinite_weights() {
        assert!(LqrSpec::constant("bad", m(0.0), m(1.0), m(0.1), m(-1.0), m(0.0), 1.0).is_err());
    }

    #[test]
    fn record_layout() {
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        let sol = riccati_solve(&LqrSpec::scalar_example(), 1.0, &grid).unwrap();
        let rec = sol.to_record();
        assert_eq!(rec.grid.len(), 5);
        assert_eq!(rec.f[4], vec![0.0]);
        let json = serde_json::to_string(&rec).unwrap();
        let back: RiccatiSolutionRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rec);
    }
}
