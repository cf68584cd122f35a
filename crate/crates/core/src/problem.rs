//! The forward control problem: minimize
//! `E[g(X(T)) + ∫ (f(t, X) + θ|u|²) dt]` subject to
//! `dX = b(t, X, u) dt + σ(t, X, u) dW`, with `θ` left free.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// `(t, x) -> out`.
pub type StateFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// `(t, x, u) -> out`.
pub type StateControlFn = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;
pub type RunningCostFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
pub type TerminalCostFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Drift `b`. Matrices are row-major.
#[derive(Clone)]
pub enum Drift {
    /// `b(t, x, u) = base(t, x) + gain(t, x) u` with `gain` a `d×k` matrix.
    ControlAffine { base: StateFn, gain: StateFn },
    General(StateControlFn),
}

/// Diffusion `σ`, a `d×m` row-major matrix.
#[derive(Clone)]
pub enum Diffusion {
    Zero,
    /// Does not depend on the control.
    StateDependent(StateFn),
    General(StateControlFn),
}

impl Diffusion {
    pub fn is_zero(&self) -> bool {
        matches!(self, Diffusion::Zero)
    }

    pub fn is_control_free(&self) -> bool {
        !matches!(self, Diffusion::General(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ControlSet {
    Unbounded,
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl ControlSet {
    pub fn unit_interval() -> Self {
        ControlSet::Box {
            lo: vec![0.0],
            hi: vec![1.0],
        }
    }

    pub fn is_bounded(&self) -> bool {
        matches!(self, ControlSet::Box { .. })
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        match self {
            ControlSet::Unbounded => u.iter().all(|v| v.is_finite()),
            ControlSet::Box { lo, hi } => u
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (l, h))| *l <= *v && *v <= *h),
        }
    }

    /// Projects `u` onto the set componentwise.
    pub fn clamp(&self, u: &mut [f64]) {
        if let ControlSet::Box { lo, hi } = self {
            for ((v, l), h) in u.iter_mut().zip(lo).zip(hi) {
                *v = v.clamp(*l, *h);
            }
        }
    }
}

/// Initial state: fixed, or independent Gaussian components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitialState {
    Fixed { state: Vec<f64> },
    Gaussian { mean: Vec<f64>, std_dev: Vec<f64> },
}

impl InitialState {
    pub fn fixed(state: Vec<f64>) -> Self {
        InitialState::Fixed { state }
    }

    pub fn standard_normal(dim: usize) -> Self {
        InitialState::Gaussian {
            mean: vec![0.0; dim],
            std_dev: vec![1.0; dim],
        }
    }

    fn dim(&self) -> usize {
        match self {
            InitialState::Fixed { state } => state.len(),
            InitialState::Gaussian { mean, .. } => mean.len(),
        }
    }

    /// Writes `X(0)` into `out`. Draws from `rng` only when random.
    pub fn sample(&self, rng: &mut Stream, out: &mut [f64]) {
        match self {
            InitialState::Fixed { state } => out.copy_from_slice(state),
            InitialState::Gaussian { mean, std_dev } => {
                for ((o, m), s) in out.iter_mut().zip(mean).zip(std_dev) {
                    *o = m + s * rng::std_normal(rng);
                }
            }
        }
    }
}

/// Problem data `(b, σ, f, g, U, T, X₀)`; the penalty weight is supplied by callers.
#[derive(Clone)]
pub struct ControlProblem {
    tag: String,
    dim_state: usize,
    dim_control: usize,
    dim_noise: usize,
    drift: Drift,
    diffusion: Diffusion,
    running_cost: RunningCostFn,
    terminal_cost: TerminalCostFn,
    control_set: ControlSet,
    horizon: f64,
    initial_state: InitialState,
}

impl fmt::Debug for ControlProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlProblem")
            .field("tag", &self.tag)
            .field("dim_state", &self.dim_state)
            .field("dim_control", &self.dim_control)
            .field("dim_noise", &self.dim_noise)
            .field("control_set", &self.control_set)
            .field("horizon", &self.horizon)
            .field("initial_state", &self.initial_state)
            .finish_non_exhaustive()
    }
}

impl ControlProblem {
    pub fn builder(dim_state: usize, dim_control: usize, dim_noise: usize) -> ControlProblemBuilder {
        ControlProblemBuilder::new(dim_state, dim_control, dim_noise)
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn dim_state(&self) -> usize {
        self.dim_state
    }

    pub fn dim_control(&self) -> usize {
        self.dim_control
    }

    pub fn dim_noise(&self) -> usize {
        self.dim_noise
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn control_set(&self) -> &ControlSet {
        &self.control_set
    }

    pub fn initial_state(&self) -> &InitialState {
        &self.initial_state
    }

    pub fn drift_model(&self) -> &Drift {
        &self.drift
    }

    pub fn diffusion_model(&self) -> &Diffusion {
        &self.diffusion
    }

    /// `b(t, x, u)` into `out` (length `d`). `scratch` must hold `d·k` values.
    pub fn drift(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        match &self.drift {
            Drift::ControlAffine { base, gain } => {
                base(t, x, out);
                let k = self.dim_control;
                gain(t, x, scratch);
                for (i, o) in out.iter_mut().enumerate() {
                    let row = &scratch[i * k..(i + 1) * k];
                    *o += row.iter().zip(u).map(|(g, v)| g * v).sum::<f64>();
                }
            }
            Drift::General(b) => b(t, x, u, out),
        }
    }

    /// `σ(t, x, u)` into `out` (`d×m`, row-major). Returns `false` for zero
    /// diffusion without touching `out`.
    pub fn diffusion(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]) -> bool {
        match &self.diffusion {
            Diffusion::Zero => false,
            Diffusion::StateDependent(s) => {
                s(t, x, out);
                true
            }
            Diffusion::General(s) => {
                s(t, x, u, out);
                true
            }
        }
    }

    pub fn running_cost(&self, t: f64, x: &[f64]) -> f64 {
        (self.running_cost)(t, x)
    }

    pub fn terminal_cost(&self, x: &[f64]) -> f64 {
        (self.terminal_cost)(x)
    }
}

pub struct ControlProblemBuilder {
    tag: String,
    dim_state: usize,
    dim_control: usize,
    dim_noise: usize,
    drift: Option<Drift>,
    diffusion: Diffusion,
    running_cost: Option<RunningCostFn>,
    terminal_cost: Option<TerminalCostFn>,
    control_set: ControlSet,
    horizon: f64,
    initial_state: Option<InitialState>,
}

impl ControlProblemBuilder {
    fn new(dim_state: usize, dim_control: usize, dim_noise: usize) -> Self {
        Self {
            tag: "custom".into(),
            dim_state,
            dim_control,
            dim_noise,
            drift: None,
            diffusion: Diffusion::Zero,
            running_cost: None,
            terminal_cost: None,
            control_set: ControlSet::Unbounded,
            horizon: 1.0,
            initial_state: None,
        }
    }

    pub fn tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = tag.into();
        self
    }

    pub fn control_affine_drift(
        mut self,
        base: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
        gain: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.drift = Some(Drift::ControlAffine {
            base: Arc::new(base),
            gain: Arc::new(gain),
        });
        self
    }

    pub fn general_drift(
        mut self,
        b: impl Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.drift = Some(Drift::General(Arc::new(b)));
        self
    }

    pub fn state_diffusion(
        mut self,
        s: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.diffusion = Diffusion::StateDependent(Arc::new(s));
        self
    }

    pub fn general_diffusion(
        mut self,
        s: impl Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.diffusion = Diffusion::General(Arc::new(s));
        self
    }

    pub fn running_cost(mut self, f: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.running_cost = Some(Arc::new(f));
        self
    }

    pub fn terminal_cost(mut self, g: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.terminal_cost = Some(Arc::new(g));
        self
    }

    pub fn control_set(mut self, set: ControlSet) -> Self {
        self.control_set = set;
        self
    }

    pub fn horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn initial_state(mut self, init: InitialState) -> Self {
        self.initial_state = Some(init);
        self
    }

    pub fn build(self) -> Result<ControlProblem> {
        let (d, k) = (self.dim_state, self.dim_control);
        if d == 0 || k == 0 || self.dim_noise == 0 {
            return Err(Error::invalid("state, control and noise dimensions must be positive"));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::invalid(format!("horizon must be positive, got {}", self.horizon)));
        }
        if let ControlSet::Box { lo, hi } = &self.control_set {
            if lo.len() != k || hi.len() != k {
                return Err(Error::invalid(format!("control box must have {k} components")));
            }
            if lo.iter().zip(hi).any(|(l, h)| !(l <= h)) {
                return Err(Error::invalid("control box needs lo <= hi componentwise"));
            }
        }
        let initial_state = self
            .initial_state
            .unwrap_or_else(|| InitialState::fixed(vec![0.0; d]));
        if initial_state.dim() != d {
            return Err(Error::invalid(format!("initial state must have {d} components")));
        }
        let drift = self.drift.unwrap_or_else(|| Drift::ControlAffine {
            base: Arc::new(|_, _, out: &mut [f64]| out.fill(0.0)),
            gain: Arc::new(|_, _, out: &mut [f64]| out.fill(0.0)),
        });
        Ok(ControlProblem {
            tag: self.tag,
            dim_state: d,
            dim_control: k,
            dim_noise: self.dim_noise,
            drift,
            diffusion: self.diffusion,
            running_cost: self.running_cost.unwrap_or_else(|| Arc::new(|_, _| 0.0)),
            terminal_cost: self.terminal_cost.unwrap_or_else(|| Arc::new(|_| 0.0)),
            control_set: self.control_set,
            horizon: self.horizon,
            initial_state,
        })
    }
}
