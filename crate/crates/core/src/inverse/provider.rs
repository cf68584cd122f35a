use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::kernel::{hjb_backward_solve, HjbOptions, KernelSystem, KernelValueModel, Retention};
use crate::lqr::{riccati_solve, scalar_riccati_closed_form, LqrSpec};
use crate::problem::ControlProblem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Riccati,
    Kernel,
}

/// `V(0, ·; θ)` for one solved `θ`.
#[derive(Debug, Clone)]
pub enum InitialValue {
    /// `xᵀ F x + G`.
    Quadratic { f: DMatrix<f64>, g: f64 },
    Kernel(KernelValueModel),
}

impl InitialValue {
    pub fn at(&self, x: &[f64]) -> Result<f64> {
        match self {
            InitialValue::Quadratic { f, g } => {
                if x.len() != f.nrows() {
                    return Err(Error::invalid("state dimension differs from the Riccati solution"));
                }
                let mut q = 0.0;
                for r in 0..x.len() {
                    for c in 0..x.len() {
                        q += x[r] * f[(r, c)] * x[c];
                    }
                }
                Ok(q + g)
            }
            InitialValue::Kernel(model) => model.value(0, x),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            InitialValue::Quadratic { f, .. } => f.nrows(),
            InitialValue::Kernel(model) => model.system().collocation().dim(),
        }
    }
}

enum Source {
    ScalarClosedForm,
    Riccati { spec: LqrSpec, grid: TimeGrid },
    Kernel {
        problem: ControlProblem,
        grid: TimeGrid,
        system: Arc<KernelSystem>,
        options: HjbOptions,
    },
}

/// Maps `θ` to the initial value function, caching solves on a quantized
/// `θ` lattice. Concurrent readers share the cache; a miss solves outside
/// the lock and inserts afterwards.
pub struct ValueProvider {
    source: Source,
    quantum: f64,
    cache: RwLock<HashMap<i64, Arc<InitialValue>>>,
    solves: AtomicUsize,
}

impl ValueProvider {
    /// Exact closed form of the scalar example problem
    /// (`dX = u dt + 0.1 dW`, cost `10x² + θu²`, `T = 1`). Not cached.
    pub fn scalar_closed_form() -> Self {
        Self::with_source(Source::ScalarClosedForm)
    }

    /// Numeric Riccati solve on `grid` for each requested `θ`.
    pub fn riccati(spec: LqrSpec, grid: TimeGrid) -> Result<Self> {
        spec.validate()?;
        if (grid.horizon() - spec.horizon).abs() > 1e-12 * spec.horizon.max(1.0) {
            return Err(Error::invalid("Riccati grid does not span the problem horizon"));
        }
        Ok(Self::with_source(Source::Riccati { spec, grid }))
    }

    /// Kernel HJB solve on `grid` for each requested `θ`; only `c_0` is kept.
    pub fn kernel(problem: ControlProblem, grid: TimeGrid, system: Arc<KernelSystem>, options: HjbOptions) -> Result<Self> {
        if system.collocation().dim() != problem.dim_state() {
            return Err(Error::invalid("collocation dimension differs from the state dimension"));
        }
        let options = HjbOptions {
            retention: Retention::InitialOnly,
            ..options
        };
        Ok(Self::with_source(Source::Kernel {
            problem,
            grid,
            system,
            options,
        }))
    }

    fn with_source(source: Source) -> Self {
        Self {
            source,
            quantum: 0.0,
            cache: RwLock::new(HashMap::new()),
            solves: AtomicUsize::new(0),
        }
    }

    /// Solves at the centre of the `quantum`-wide bucket containing `θ`.
    /// Zero disables quantization (cache keys are then exact `θ` bits).
    pub fn with_quantum(mut self, quantum: f64) -> Result<Self> {
        if !(quantum >= 0.0) || !quantum.is_finite() {
            return Err(Error::invalid(format!("quantum must be nonnegative, got {quantum}")));
        }
        self.quantum = quantum;
        Ok(self)
    }

    pub fn backend(&self) -> Backend {
        match self.source {
            Source::ScalarClosedForm | Source::Riccati { .. } => Backend::Riccati,
            Source::Kernel { .. } => Backend::Kernel,
        }
    }

    pub fn quantum(&self) -> f64 {
        self.quantum
    }

    /// Number of underlying solves performed so far.
    pub fn solves(&self) -> usize {
        self.solves.load(Ordering::Relaxed)
    }

    pub fn kernel_system(&self) -> Option<&KernelSystem> {
        match &self.source {
            Source::Kernel { system, .. } => Some(system),
            _ => None,
        }
    }

    /// The `θ` a request is actually solved at.
    pub fn effective_theta(&self, theta: f64) -> f64 {
        if self.quantum > 0.0 {
            let q = (theta / self.quantum).round() * self.quantum;
            if q > 0.0 {
                q
            } else {
                theta
            }
        } else {
            theta
        }
    }

    fn key(&self, theta: f64) -> i64 {
        if self.quantum > 0.0 {
            (theta / self.quantum).round() as i64
        } else {
            theta.to_bits() as i64
        }
    }

    pub fn initial_value(&self, theta: f64) -> Result<Arc<InitialValue>> {
        if !(theta > 0.0) || !theta.is_finite() {
            return Err(Error::invalid(format!("theta must be positive, got {theta}")));
        }
        if let Source::ScalarClosedForm = self.source {
            let (f, g) = scalar_riccati_closed_form(0.0, theta)?;
            return Ok(Arc::new(InitialValue::Quadratic {
                f: DMatrix::from_element(1, 1, f),
                g,
            }));
        }
        let key = self.key(theta);
        if let Some(hit) = self.cache.read().expect("cache lock poisoned").get(&key) {
            return Ok(hit.clone());
        }
        let solved = Arc::new(self.solve(self.effective_theta(theta)).map_err(|e| e.at_theta(theta))?);
        self.solves.fetch_add(1, Ordering::Relaxed);
        let mut cache = self.cache.write().expect("cache lock poisoned");
        Ok(cache.entry(key).or_insert(solved).clone())
    }

    fn solve(&self, theta: f64) -> Result<InitialValue> {
        match &self.source {
            Source::ScalarClosedForm => unreachable!("closed form bypasses the cache"),
            Source::Riccati { spec, grid } => {
                let sol = riccati_solve(spec, theta, grid)?;
                Ok(InitialValue::Quadratic {
                    f: sol.f(0).clone(),
                    g: sol.g(0),
                })
            }
            Source::Kernel {
                problem,
                grid,
                system,
                options,
            } => Ok(InitialValue::Kernel(hjb_backward_solve(
                problem,
                theta,
                grid,
                system.clone(),
                *options,
            )?)),
        }
    }

    /// `V(0, x; θ)`.
    pub fn value(&self, theta: f64, x: &[f64]) -> Result<f64> {
        self.initial_value(theta)?.at(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn closed_form_value() {
        let p = ValueProvider::scalar_closed_form();
        assert_eq!(p.backend(), Backend::Riccati);
        assert_relative_eq!(p.value(1.0, &[1.0]).unwrap(), 3.1757, epsilon = 5e-5);
        assert_eq!(p.value(1.0, &[1.0]).unwrap(), p.value(1.0, &[1.0]).unwrap());
        assert!(p.value(0.0, &[1.0]).is_err());
    }

    #[test]
    fn numeric_riccati_matches_closed_form() {
        let grid = TimeGrid::uniform(1.0, 1000).unwrap();
        let p = ValueProvider::riccati(LqrSpec::scalar_example(), grid).unwrap();
        let exact = ValueProvider::scalar_closed_form();
        for theta in [0.01, 0.5, 1.0, 7.0] {
            let a = p.value(theta, &[0.7]).unwrap();
            let b = exact.value(theta, &[0.7]).unwrap();
            assert_relative_eq!(a, b, max_relative = 1e-7);
        }
        assert_eq!(p.solves(), 4);
    }

    #[test]
    fn quantized_cache() {
        let grid = TimeGrid::uniform(1.0, 100).unwrap();
        let p = ValueProvider::riccati(LqrSpec::scalar_example(), grid)
            .unwrap()
            .with_quantum(1e-3)
            .unwrap();
        let a = p.value(1.0001, &[1.0]).unwrap();
        let b = p.value(0.9996, &[1.0]).unwrap();
        assert_eq!(a, b);
        assert_eq!(p.solves(), 1);
        assert_eq!(p.effective_theta(1.0001), 1.0);
        p.value(1.002, &[1.0]).unwrap();
        assert_eq!(p.solves(), 2);
    }
}
