//! Kernel-based collocation for the HJB equation with Gaussian radial basis
//! functions on a fixed node set.

mod collocation;
mod hamiltonian;
mod hjb;
mod system;

pub use collocation::{build_collocation_grid, CollocationSet};
pub use hamiltonian::{minimize_hamiltonian, Hamiltonian, HamiltonianOptions, DEFAULT_SEARCH_RESOLUTION};
pub use hjb::{
    extract_policy, hjb_backward_solve, HjbOptions, KernelPolicy, KernelValueModel, KernelValueModelRecord,
    Retention,
};
pub use system::{assemble_kernel_system, GaussianKernel, KernelEval, KernelSystem, NodalOperators, FALLBACK_NUGGET};
