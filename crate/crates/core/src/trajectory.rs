use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;

/// States and controls sampled at every grid node, row-major.
///
/// The control stored at the final node is kept for completeness but never
/// enters the cost quadrature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    grid: TimeGrid,
    dim_state: usize,
    dim_control: usize,
    states: Vec<f64>,
    controls: Vec<f64>,
}

impl Trajectory {
    pub fn new(
        grid: TimeGrid,
        dim_state: usize,
        dim_control: usize,
        states: Vec<f64>,
        controls: Vec<f64>,
    ) -> Result<Self> {
        let nodes = grid.len();
        if dim_state == 0 || dim_control == 0 {
            return Err(Error::invalid("trajectory dimensions must be positive"));
        }
        if states.len() != nodes * dim_state || controls.len() != nodes * dim_control {
            return Err(Error::invalid(format!(
                "trajectory arrays do not match {nodes} nodes with d = {dim_state}, k = {dim_control}"
            )));
        }
        if let Some(p) = states.iter().chain(&controls).position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite trajectory entry at flat index {p}")));
        }
        Ok(Self {
            grid,
            dim_state,
            dim_control,
            states,
            controls,
        })
    }

    pub(crate) fn from_parts_unchecked(
        grid: TimeGrid,
        dim_state: usize,
        dim_control: usize,
        states: Vec<f64>,
        controls: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(states.len(), grid.len() * dim_state);
        debug_assert_eq!(controls.len(), grid.len() * dim_control);
        Self {
            grid,
            dim_state,
            dim_control,
            states,
            controls,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim_state(&self) -> usize {
        self.dim_state
    }

    pub fn dim_control(&self) -> usize {
        self.dim_control
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim_state..(i + 1) * self.dim_state]
    }

    pub fn control(&self, i: usize) -> &[f64] {
        &self.controls[i * self.dim_control..(i + 1) * self.dim_control]
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn controls(&self) -> &[f64] {
        &self.controls
    }

    pub(crate) fn states_mut(&mut self) -> &mut [f64] {
        &mut self.states
    }

    pub fn initial_state(&self) -> &[f64] {
        self.state(0)
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.grid.steps())
    }

    /// `Σ_{i<n} |u_i|² Δt_i`.
    pub fn control_energy(&self) -> f64 {
        (0..self.grid.steps())
            .map(|i| self.control(i).iter().map(|v| v * v).sum::<f64>() * self.grid.dt(i))
            .sum()
    }
}

/// `N` trajectories observed on one shared grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    problem_tag: String,
    grid: TimeGrid,
    trajectories: Vec<Trajectory>,
}

impl ObservationSet {
    pub fn new(problem_tag: impl Into<String>, grid: TimeGrid, trajectories: Vec<Trajectory>) -> Result<Self> {
        let first = trajectories
            .first()
            .ok_or_else(|| Error::invalid("an observation set needs at least one trajectory"))?;
        let (d, k) = (first.dim_state, first.dim_control);
        for (j, tr) in trajectories.iter().enumerate() {
            if !tr.grid.same_nodes(&grid) {
                return Err(Error::invalid(format!("trajectory {j} is on a different time grid")));
            }
            if tr.dim_state != d || tr.dim_control != k {
                return Err(Error::invalid(format!("trajectory {j} has mismatched dimensions")));
            }
        }
        Ok(Self {
            problem_tag: problem_tag.into(),
            grid,
            trajectories,
        })
    }

    pub fn problem_tag(&self) -> &str {
        &self.problem_tag
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub(crate) fn trajectories_mut(&mut self) -> &mut [Trajectory] {
        &mut self.trajectories
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn dim_state(&self) -> usize {
        self.trajectories[0].dim_state
    }

    pub fn dim_control(&self) -> usize {
        self.trajectories[0].dim_control
    }

    /// Same set with trajectories reordered by `order[j]` (a permutation).
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.len()];
        for &j in order {
            if j >= self.len() || std::mem::replace(&mut seen[j], true) {
                return Err(Error::invalid("not a permutation of the trajectory indices"));
            }
        }
        if order.len() != self.len() {
            return Err(Error::invalid("not a permutation of the trajectory indices"));
        }
        Ok(Self {
            problem_tag: self.problem_tag.clone(),
            grid: self.grid.clone(),
            trajectories: order.iter().map(|&j| self.trajectories[j].clone()).collect(),
        })
    }
}
