//! Built-in problems.
//!
//! `lqr1d`: `dX = u dt + 0.1 dW`, running cost `10x² + θu²`, no terminal
//! cost, `T = 1`, `X₀ ~ N(0, 1)`, unconstrained control.
//!
//! `sir`: vaccination control of an SIR epidemic,
//! `S' = −βSI − uS`, `I' = βSI − μI`, `R' = μI + uS` with `β = 0.2`,
//! `μ = 0.1`, `(S, I, R)(0) = (0.95, 0.05, 0)`, running cost `10I + θu²`,
//! `T = 10`, `u ∈ [0, 1]`, no noise.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use invctl_core::lqr::LqrSpec;
use invctl_core::{ControlProblem, ControlSet, Error, InitialState, Result};

pub const SIR_BETA: f64 = 0.2;
pub const SIR_MU: f64 = 0.1;
pub const SIR_INITIAL: [f64; 3] = [0.95, 0.05, 0.0];
pub const SIR_HORIZON: f64 = 10.0;
pub const SIR_INFECTION_WEIGHT: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Lqr1d,
    Sir,
}

impl Preset {
    pub const ALL: [Preset; 2] = [Preset::Lqr1d, Preset::Sir];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Lqr1d => "lqr1d",
            Preset::Sir => "sir",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown preset `{s}`; available presets: lqr1d, sir")))
    }
}

pub fn lqr1d() -> (ControlProblem, LqrSpec) {
    let spec = LqrSpec::scalar_example();
    let problem = spec
        .to_problem(InitialState::standard_normal(1))
        .expect("built-in LQR preset is valid");
    (problem, spec)
}

pub fn sir() -> ControlProblem {
    ControlProblem::builder(3, 1, 1)
        .tag("sir")
        .control_affine_drift(
            |_, x, b| {
                let infection = SIR_BETA * x[0] * x[1];
                b[0] = -infection;
                b[1] = infection - SIR_MU * x[1];
                b[2] = SIR_MU * x[1];
            },
            |_, x, g| {
                g[0] = -x[0];
                g[1] = 0.0;
                g[2] = x[0];
            },
        )
        .running_cost(|_, x| SIR_INFECTION_WEIGHT * x[1])
        .control_set(ControlSet::unit_interval())
        .horizon(SIR_HORIZON)
        .initial_state(InitialState::fixed(SIR_INITIAL.to_vec()))
        .build()
        .expect("built-in SIR preset is valid")
}

/// The problem for a preset, with its LQR data when it has any.
pub fn preset_problem(name: &str) -> Result<(ControlProblem, Option<LqrSpec>)> {
    Ok(match name.parse::<Preset>()? {
        Preset::Lqr1d => {
            let (p, s) = lqr1d();
            (p, Some(s))
        }
        Preset::Sir => (sir(), None),
    })
}
