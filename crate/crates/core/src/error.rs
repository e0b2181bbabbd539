//! Error type shared by all modules of the crate.

use thiserror::Error;

/// Errors produced by construction, validation, and numerical routines.
#[derive(Debug, Error)]
pub enum CoreError {
    /// Two objects that must share a dimension do not.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// An operation only implemented for certain dimensions was called
    /// outside its supported range.
    #[error("{op} supports dimension <= {max}, got {got}")]
    UnsupportedDimension {
        op: &'static str,
        max: usize,
        got: usize,
    },

    /// An argument failed validation (empty input, non-finite value, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A potential evaluation overflowed or returned a non-finite value.
    #[error("potential overflow at |x| = {radius:.6e} (value {value:.6e})")]
    PotentialOverflow { radius: f64, value: f64 },

    /// Normalisation-constant refinement did not reach the requested
    /// relative tolerance.
    #[error("normalisation constant did not converge: relative change {rel_change:.3e} after {refinements} refinements")]
    NormalisationDiverged { rel_change: f64, refinements: usize },

    /// Two ensembles passed to a pairwise operation have different sizes.
    #[error("ensemble sizes differ: {left} vs {right}")]
    UnequalEnsembleSizes { left: usize, right: usize },

    /// A particle trajectory left the guarded region.
    #[error("trajectory blow-up at t = {time:.6}: max |x| = {max_abs:.3e} exceeds {guard:.1e}")]
    TrajectoryBlowUp { time: f64, max_abs: f64, guard: f64 },

    /// A velocity evaluation produced a non-finite component.
    #[error("non-finite velocity for particle {particle} at t = {time:.6}")]
    NonFiniteVelocity { particle: usize, time: f64 },

    /// An explicit step violated the CFL stability condition.
    #[error("CFL violation: dt = {dt:.6e} exceeds limit {limit:.6e} (max face speed {max_speed:.6e})")]
    CflViolation { dt: f64, limit: f64, max_speed: f64 },

    /// Grid operands do not live on the same grid.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// A density that must be nonnegative had a value below the clip
    /// tolerance.
    #[error("negative density value {value:.3e} at cell {cell} (tolerance {tol:.1e})")]
    NegativeDensity { cell: usize, value: f64, tol: f64 },

    /// A linear-program solve exceeded its iteration budget without
    /// reaching optimality and no feasible iterate was available.
    #[error("LP solver failed: {0}")]
    LpFailure(String),

    /// Input/output failure while persisting or loading artifacts.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A persisted artifact could not be parsed back.
    #[error("parse error: {0}")]
    Parse(String),
}
