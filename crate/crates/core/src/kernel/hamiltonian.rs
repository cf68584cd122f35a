//! Pointwise minimization of
//! `b(t,x,u)ᵀp + ½ tr(σσᵀ(t,x,u) M) + f(t,x) + θ|u|²` over `u ∈ U`.

use crate::error::{Error, Result};
use crate::problem::{ControlProblem, ControlSet, Drift};

/// Grid points per control dimension used when no closed form applies.
pub const DEFAULT_SEARCH_RESOLUTION: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianOptions {
    pub search_resolution: usize,
    /// Skip the closed form even when the structure allows it.
    pub force_grid_search: bool,
}

impl Default for HamiltonianOptions {
    fn default() -> Self {
        Self {
            search_resolution: DEFAULT_SEARCH_RESOLUTION,
            force_grid_search: false,
        }
    }
}

/// Reusable minimizer for one `(problem, θ)` pair. Holds scratch buffers so
/// the per-node loop of the HJB solver does not allocate.
pub struct Hamiltonian<'a> {
    problem: &'a ControlProblem,
    theta: f64,
    options: HamiltonianOptions,
    closed_form: bool,
    u: Vec<f64>,
    candidate: Vec<f64>,
    drift: Vec<f64>,
    gain: Vec<f64>,
    sigma: Vec<f64>,
}

impl<'a> Hamiltonian<'a> {
    pub fn new(problem: &'a ControlProblem, theta: f64, options: HamiltonianOptions) -> Result<Self> {
        if !(theta > 0.0) || !theta.is_finite() {
            return Err(Error::invalid(format!("theta must be positive, got {theta}")));
        }
        let affine = matches!(problem.drift_model(), Drift::ControlAffine { .. });
        let closed_form = affine && problem.diffusion_model().is_control_free() && !options.force_grid_search;
        if !closed_form {
            if !problem.control_set().is_bounded() {
                return Err(Error::UnsupportedStructure(
                    "the Hamiltonian has no closed-form minimizer here and an unbounded control \
                     set cannot be grid-searched"
                        .into(),
                ));
            }
            if options.search_resolution < 2 {
                return Err(Error::invalid("grid search needs at least two points per dimension"));
            }
        }
        let (d, k, m) = (problem.dim_state(), problem.dim_control(), problem.dim_noise());
        Ok(Self {
            problem,
            theta,
            options,
            closed_form,
            u: vec![0.0; k],
            candidate: vec![0.0; k],
            drift: vec![0.0; d],
            gain: vec![0.0; d * k],
            sigma: vec![0.0; d * m],
        })
    }

    pub fn uses_closed_form(&self) -> bool {
        self.closed_form
    }

    /// Minimizer from the last call to [`Hamiltonian::minimize`].
    pub fn control(&self) -> &[f64] {
        &self.u
    }

    /// Minimizes at `(t, x, p, M)` (`M` row-major `d×d`) and returns the
    /// minimal value; the minimizer is left in [`Hamiltonian::control`].
    pub fn minimize(&mut self, t: f64, x: &[f64], p: &[f64], hess: &[f64]) -> f64 {
        let f = self.problem.running_cost(t, x);
        if self.closed_form {
            let k = self.problem.dim_control();
            let Drift::ControlAffine { base, gain } = self.problem.drift_model() else {
                unreachable!("closed form requires control-affine drift")
            };
            gain(t, x, &mut self.gain);
            for (c, u) in self.u.iter_mut().enumerate() {
                let q: f64 = (0..p.len()).map(|r| self.gain[r * k + c] * p[r]).sum();
                *u = -q / (2.0 * self.theta);
            }
            self.problem.control_set().clamp(&mut self.u);
            base(t, x, &mut self.drift);
            let mut h = 0.0;
            for (r, pr) in p.iter().enumerate() {
                let gu: f64 = (0..k).map(|c| self.gain[r * k + c] * self.u[c]).sum();
                h += (self.drift[r] + gu) * pr;
            }
            let diff = self.diffusion_term(t, x, hess, true);
            let u2: f64 = self.u.iter().map(|v| v * v).sum();
            h + diff + f + self.theta * u2
        } else {
            self.grid_search(t, x, p, hess, f)
        }
    }

    fn diffusion_term(&mut self, t: f64, x: &[f64], hess: &[f64], control_free: bool) -> f64 {
        let d = self.problem.dim_state();
        let m = self.problem.dim_noise();
        let u = if control_free { &self.u } else { &self.candidate };
        if !self.problem.diffusion(t, x, u, &mut self.sigma) {
            return 0.0;
        }
        let mut acc = 0.0;
        for a in 0..d {
            for b in 0..d {
                let sst: f64 = (0..m).map(|r| self.sigma[a * m + r] * self.sigma[b * m + r]).sum();
                acc += sst * hess[b * d + a];
            }
        }
        0.5 * acc
    }

    fn grid_search(&mut self, t: f64, x: &[f64], p: &[f64], hess: &[f64], f: f64) -> f64 {
        let ControlSet::Box { lo, hi } = self.problem.control_set().clone() else {
            unreachable!("checked in constructor")
        };
        let k = self.problem.dim_control();
        let res = self.options.search_resolution;
        let control_free = self.problem.diffusion_model().is_control_free();
        let fixed_diffusion = if control_free {
            Some(self.diffusion_term(t, x, hess, true))
        } else {
            None
        };
        let total = res.pow(k as u32);
        let mut best = f64::INFINITY;
        for flat in 0..total {
            let mut rem = flat;
            for c in (0..k).rev() {
                let idx = rem % res;
                rem /= res;
                self.candidate[c] = if idx == res - 1 {
                    hi[c]
                } else {
                    lo[c] + (hi[c] - lo[c]) * idx as f64 / (res - 1) as f64
                };
            }
            self.problem
                .drift(t, x, &self.candidate, &mut self.drift, &mut self.gain);
            let mut h: f64 = self.drift.iter().zip(p).map(|(b, q)| b * q).sum();
            h += match fixed_diffusion {
                Some(v) => v,
                None => self.diffusion_term(t, x, hess, false),
            };
            h += self.theta * self.candidate.iter().map(|v| v * v).sum::<f64>();
            if h < best {
                best = h;
                self.u.copy_from_slice(&self.candidate);
            }
        }
        best + f
    }
}

/// One-shot minimization; returns `(u*, H)`.
pub fn minimize_hamiltonian(
    problem: &ControlProblem,
    theta: f64,
    t: f64,
    x: &[f64],
    p: &[f64],
    hess: &[f64],
    options: HamiltonianOptions,
) -> Result<(Vec<f64>, f64)> {
    let d = problem.dim_state();
    if x.len() != d || p.len() != d || hess.len() != d * d {
        return Err(Error::invalid("Hamiltonian arguments do not match the state dimension"));
    }
    let mut h = Hamiltonian::new(problem, theta, options)?;
    let value = h.minimize(t, x, p, hess);
    Ok((h.control().to_vec(), value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::InitialState;

    fn scalar_lqr() -> ControlProblem {
        ControlProblem::builder(1, 1, 1)
            .control_affine_drift(|_, _, b| b[0] = 0.0, |_, _, g| g[0] = 1.0)
            .state_diffusion(|_, _, s| s[0] = 0.1)
            .running_cost(|_, x| 10.0 * x[0] * x[0])
            .build()
            .unwrap()
    }

    #[test]
    fn completes_the_square() {
        let p = scalar_lqr();
        let (u, h) = minimize_hamiltonian(&p, 1.0, 0.0, &[0.0], &[2.0], &[0.0], Default::default()).unwrap();
        assert_eq!(u, vec![-1.0]);
        assert!((h + 1.0).abs() < 1e-15);
        let (_, h) = minimize_hamiltonian(&p, 2.0, 0.0, &[0.5], &[1.0], &[3.0], Default::default()).unwrap();
        let expected = -1.0 / 8.0 + 3.0 / 200.0 + 2.5;
        assert!((h - expected).abs() < 1e-14);
    }

    #[test]
    fn epidemic_clamp() {
        let (beta, mu) = (0.0, 0.0);
        let p = ControlProblem::builder(3, 1, 1)
            .control_affine_drift(
                move |_, x, b| {
                    b[0] = -beta * x[0] * x[1];
                    b[1] = beta * x[0] * x[1] - mu * x[1];
                    b[2] = mu * x[1];
                },
                |_, x, g| {
                    g[0] = -x[0];
                    g[1] = 0.0;
                    g[2] = x[0];
                },
            )
            .control_set(ControlSet::unit_interval())
            .initial_state(InitialState::fixed(vec![1.0, 0.0, 0.0]))
            .build()
            .unwrap();
        let (u, h) = minimize_hamiltonian(
            &p,
            1.0,
            0.0,
            &[1.0, 0.0, 0.0],
            &[1.0, 0.0, 0.0],
            &[0.0; 9],
            Default::default(),
        )
        .unwrap();
        assert_eq!(u, vec![0.5]);
        assert!((h + 0.25).abs() < 1e-15);
    }

    #[test]
    fn zero_costate_means_zero_control() {
        let p = ControlProblem::builder(2, 1, 2)
            .control_affine_drift(|_, _, b| b.fill(0.3), |_, _, g| g.fill(1.0))
            .state_diffusion(|_, _, s| {
                s.copy_from_slice(&[1.0, 0.0, 0.5, 2.0]);
            })
            .running_cost(|_, _| 4.0)
            .build()
            .unwrap();
        let m = [1.0, 0.2, 0.2, -0.5];
        let (u, h) = minimize_hamiltonian(&p, 1.0, 0.0, &[0.0, 0.0], &[0.0, 0.0], &m, Default::default()).unwrap();
        assert_eq!(u, vec![0.0]);
        // σσᵀ = [[1, 0.5], [0.5, 4.25]]
        let expected = 0.5 * (1.0 * 1.0 + 0.5 * 0.2 * 2.0 + 4.25 * -0.5) + 4.0;
        assert!((h - expected).abs() < 1e-14);
    }

    #[test]
    fn unbounded_general_drift_unsupported() {
        let p = ControlProblem::builder(1, 1, 1)
            .general_drift(|_, _, u, b| b[0] = u[0].sin())
            .build()
            .unwrap();
        let err = minimize_hamiltonian(&p, 1.0, 0.0, &[0.0], &[1.0], &[0.0], Default::default()).unwrap_err();
        assert!(matches!(err, Error::UnsupportedStructure(_)));
    }

    #[test]
    fn grid_search_handles_nonlinear_drift() {
        let p = ControlProblem::builder(1, 1, 1)
            .general_drift(|_, _, u, b| b[0] = u[0] * u[0] * u[0])
            .control_set(ControlSet::Box {
                lo: vec![-1.0],
                hi: vec![1.0],
            })
            .build()
            .unwrap();
        let opts = HamiltonianOptions {
            search_resolution: 2001,
            ..Default::default()
        };
        // minimize u³ + u² on [-1, 1]: boundary u = -1 gives 0, interior min at u = 0 gives 0;
        // with p = 2: 2u³ + u² → u = -1 gives -1.
        let (u, h) = minimize_hamiltonian(&p, 1.0, 0.0, &[0.0], &[2.0], &[0.0], opts).unwrap();
        assert_eq!(u, vec![-1.0]);
        assert!((h + 1.0).abs() < 1e-12);
    }
}
