//! Numerical laboratory for the Stein gradient-descent particle system.
//!
//! The crate is organised around the objects of the underlying model:
//!
//! * [`measures`] — particle ensembles, signed discrete measures, grid
//!   densities, and normalised target densities `exp(-V)/Z`.
//! * [`models`] — potential / kernel families together with the assumption
//!   checkers (growth, boundedness, positive definiteness).
//! * [`dynamics`] — the interacting particle system, its integrators, flow
//!   maps driven by a background measure path, and vector-field bounds.
//! * [`metrics`] — Wasserstein distances, weighted bounded-Lipschitz norms
//!   (LP and dynamic-programming solvers plus a brute-force oracle),
//!   KL divergence and the Stein dissipation functional.
//! * [`meanfield1d`] — one-dimensional finite-volume solver for the
//!   mean-field equation and the functional identities used to audit it.
//! * [`analysis`] — Gronwall / Riccati bounds, stability certificates,
//!   particle-count schedules, and norm-series diagnostics.
//!
//! All floating-point work is deterministic: summations with a fixed
//! source order (compensated where it matters), seeded counter-based
//! random streams, and parallel loops that never change the order in
//! which contributions are accumulated.

pub mod analysis;
pub mod dynamics;
pub mod error;
pub mod meanfield1d;
pub mod measures;
pub mod metrics;
pub mod models;
pub mod numerics;

pub use error::CoreError;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, CoreError>;
