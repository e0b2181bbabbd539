//! Distances and divergences between measures: Wasserstein couplings,
//! weighted bounded-Lipschitz norms, Kullback-Leibler divergence, and
//! the kernel Stein dissipation.

mod bl;
mod divergence;
mod simplex;
mod wasserstein;

pub use bl::{
    bl_bruteforce_oracle, bl_flat_norm_1d_value, bl_weighted_norm, bl_weighted_norm_with,
    BlOptions, BlSolver, LpResult, LpStatus, BL_FEAS_TOL, MAX_BL_ATOMS,
};
pub use divergence::{kl_divergence, stein_dissipation, stein_dissipation_with, DissipationMethod};
pub use simplex::{solve_bounded_lp, BoundedLp, SimplexSolution, SimplexStatus};
pub use wasserstein::{
    wasserstein1_weighted_1d, wasserstein_1d, wasserstein_assignment, MAX_ASSIGNMENT_SIZE,
};
