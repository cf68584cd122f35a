//! Forward and inverse stochastic optimal control with a scalar penalty
//! weight: simulate controlled diffusions, solve for the value function
//! (Riccati equations for linear-quadratic problems, Gaussian-kernel
//! collocation otherwise), and estimate the weight `θ` of `θ|u|²` from
//! observed trajectories.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod grid;
pub mod inverse;
pub mod kernel;
pub mod lqr;
pub mod obs_io;
pub mod problem;
pub mod rng;
pub mod simulate;
pub mod trajectory;

pub use error::{Error, Result};
pub use grid::TimeGrid;
pub use problem::{ControlProblem, ControlSet, InitialState};
pub use trajectory::{ObservationSet, Trajectory};
