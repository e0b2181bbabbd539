//! Weighted bounded-Lipschitz (flat) norms of signed discrete measures.
//!
//! The norm is the value of a linear program: maximise `sum_i c_i phi_i`
//! with `c_i = w_i (1 + V(x_i))` (or plain `w_i` for the unweighted flat
//! norm) over test-function values `|phi_i| <= 1` obeying the Lipschitz
//! constraints `|phi_i - phi_j| <= |x_i - x_j|`. Restricting the test
//! function to atom values is exact: any feasible assignment extends to
//! a 1-Lipschitz function bounded by one on all of space (McShane
//! extension with truncation).
//!
//! Two solvers share this formulation. In one dimension the sorted
//! adjacent-gap constraints imply every pairwise constraint, so the
//! program decomposes into a chain and is solved exactly by dynamic
//! programming over concave piecewise-linear value functions. In higher
//! dimension a bounded-variable revised simplex runs on the pairwise
//! formulation, with constraints generated lazily (pairs further than 2
//! apart can never bind because the box bounds already limit
//! `|phi_i - phi_j|` to 2).

use crate::measures::SignedDiscreteMeasure;
use crate::metrics::simplex::{solve_bounded_lp, BoundedLp, SimplexStatus};
use crate::models::Potential;
use crate::numerics::{norm, sub, KahanSum};
use crate::{CoreError, Result};

/// Atom-count cap for the norm solvers.
pub const MAX_BL_ATOMS: usize = 4000;

/// Feasibility slack accepted in returned optimizers.
pub const BL_FEAS_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    /// Solver hit its iteration cap; the value is a feasible lower bound.
    IterationLimit,
}

/// Value and optimizer of a bounded-Lipschitz norm program.
#[derive(Clone, Debug)]
pub struct LpResult {
    pub value: f64,
    /// Test-function values at the atoms, in canonical atom order.
    pub optimizer: Vec<f64>,
    pub status: LpStatus,
    pub iterations: usize,
}

/// Solver selection for [`bl_weighted_norm_with`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BlSolver {
    /// Chain dynamic program in one dimension, simplex otherwise.
    #[default]
    Auto,
    /// Force the one-dimensional chain dynamic program.
    ChainDp,
    /// Force the simplex path (any dimension, used for cross-checking).
    Simplex,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct BlOptions {
    pub solver: BlSolver,
}

/// Weighted bounded-Lipschitz norm `sup { sum c_i phi(x_i) }` of a
/// canonical signed measure, with `c_i = w_i (1 + V(x_i))` when a
/// potential is given and `c_i = w_i` otherwise.
pub fn bl_weighted_norm(
    mu: &SignedDiscreteMeasure,
    potential: Option<&Potential>,
) -> Result<LpResult> {
    bl_weighted_norm_with(mu, potential, BlOptions::default())
}

pub fn bl_weighted_norm_with(
    mu: &SignedDiscreteMeasure,
    potential: Option<&Potential>,
    options: BlOptions,
) -> Result<LpResult> {
    if let Some(v) = potential {
        if v.dim() != mu.dim() {
            return Err(CoreError::DimensionMismatch {
                expected: mu.dim(),
                got: v.dim(),
            });
        }
    }
    let k = mu.n_atoms();
    if k == 0 {
        return Ok(LpResult {
            value: 0.0,
            optimizer: Vec::new(),
            status: LpStatus::Optimal,
            iterations: 0,
        });
    }
    if k > MAX_BL_ATOMS {
        return Err(CoreError::InvalidArgument(format!(
            "bounded-Lipschitz norm limited to {MAX_BL_ATOMS} atoms, got {k}"
        )));
    }
    let cs = objective_coefficients(mu, potential);

    let use_dp = match options.solver {
        BlSolver::Auto => mu.dim() == 1,
        BlSolver::ChainDp => {
            if mu.dim() != 1 {
                return Err(CoreError::UnsupportedDimension {
                    op: "bl chain dynamic program",
                    max: 1,
                    got: mu.dim(),
                });
            }
            true
        }
        BlSolver::Simplex => false,
    };

    let (phi, status, iterations) = if use_dp {
        // Canonical atoms are sorted ascending in one dimension.
        let (_, phi) = chain_dp(mu.positions_1d(), &cs, true);
        (phi.expect("optimizer requested"), LpStatus::Optimal, k)
    } else {
        solve_via_simplex(mu, &cs)?
    };

    check_feasibility(mu, &phi)?;
    let mut obj = KahanSum::new();
    for (c, p) in cs.iter().zip(&phi) {
        obj.add(c * p);
    }
    let value = obj.value();
    Ok(LpResult {
        value,
        optimizer: phi,
        status,
        iterations,
    })
}

/// Unweighted one-dimensional flat norm of a coefficient sequence on
/// sorted positions, value only. This is the chain dynamic program
/// without the atom-count cap, for large refinement studies.
pub fn bl_flat_norm_1d_value(xs: &[f64], cs: &[f64]) -> Result<f64> {
    if xs.len() != cs.len() || xs.is_empty() {
        return Err(CoreError::InvalidArgument(
            "positions and coefficients must be nonempty and equal length".into(),
        ));
    }
    if xs.windows(2).any(|w| w[1] < w[0]) {
        return Err(CoreError::InvalidArgument(
            "positions must be sorted ascending".into(),
        ));
    }
    if xs.iter().chain(cs.iter()).any(|v| !v.is_finite()) {
        return Err(CoreError::InvalidArgument(
            "positions and coefficients must be finite".into(),
        ));
    }
    Ok(chain_dp(xs, cs, false).0)
}

/// Exhaustive grid search over test-function values for measures with
/// at most four atoms; the independent oracle for [`bl_weighted_norm`].
/// Tuples violating a pairwise constraint by more than one grid spacing
/// are discarded; the slack absorbs the rounding of the continuum
/// optimizer onto the grid, so the result is within
/// (sum |c_i|) x spacing of the true optimum on either side.
pub fn bl_bruteforce_oracle(
    mu: &SignedDiscreteMeasure,
    potential: Option<&Potential>,
    grid_resolution: usize,
) -> Result<f64> {
    let k = mu.n_atoms();
    if k > 4 {
        return Err(CoreError::InvalidArgument(format!(
            "brute-force oracle limited to 4 atoms, got {k}"
        )));
    }
    if k == 0 {
        return Ok(0.0);
    }
    if grid_resolution < 2 {
        return Err(CoreError::InvalidArgument(
            "grid resolution must be at least 2".into(),
        ));
    }
    let cs = objective_coefficients(mu, potential);
    let spacing = 2.0 / (grid_resolution - 1) as f64;
    let grid: Vec<f64> = (0..grid_resolution)
        .map(|t| -1.0 + t as f64 * spacing)
        .collect();
    let mut dist = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            dist[i * k + j] = norm(&sub(mu.position(i), mu.position(j)));
        }
    }
    let slack = spacing + 1e-12;
    let mut best = f64::NEG_INFINITY;
    let mut phi = vec![0.0; k];
    search(&grid, &cs, &dist, slack, 0, &mut phi, &mut best);
    Ok(best)
}

fn search(
    grid: &[f64],
    cs: &[f64],
    dist: &[f64],
    slack: f64,
    depth: usize,
    phi: &mut [f64],
    best: &mut f64,
) {
    let k = cs.len();
    if depth == k {
        let v: f64 = cs.iter().zip(phi.iter()).map(|(c, p)| c * p).sum();
        if v > *best {
            *best = v;
        }
        return;
    }
    'outer: for &g in grid {
        for i in 0..depth {
            if (phi[i] - g).abs() > dist[i * k + depth] + slack {
                continue 'outer;
            }
        }
        phi[depth] = g;
        search(grid, cs, dist, slack, depth + 1, phi, best);
    }
}

fn objective_coefficients(mu: &SignedDiscreteMeasure, potential: Option<&Potential>) -> Vec<f64> {
    mu.atoms()
        .map(|(x, w)| match potential {
            Some(v) => w * (1.0 + v.eval(x)),
            None => w,
        })
        .collect()
}

/// Verifies the returned optimizer against the LP constraints: box
/// bounds always, adjacent gaps in one dimension (which imply the rest
/// on sorted atoms), all pairs otherwise.
fn check_feasibility(mu: &SignedDiscreteMeasure, phi: &[f64]) -> Result<()> {
    for (i, &p) in phi.iter().enumerate() {
        if p.abs() > 1.0 + BL_FEAS_TOL {
            return Err(CoreError::LpFailure(format!(
                "optimizer out of box at atom {i}: {p}"
            )));
        }
    }
    let k = phi.len();
    if mu.dim() == 1 {
        let xs = mu.positions_1d();
        for i in 0..k.saturating_sub(1) {
            if (phi[i + 1] - phi[i]).abs() > (xs[i + 1] - xs[i]) + BL_FEAS_TOL {
                return Err(CoreError::LpFailure(format!(
                    "optimizer violates Lipschitz constraint between atoms {i} and {}",
                    i + 1
                )));
            }
        }
    } else {
        for i in 0..k {
            for j in i + 1..k {
                let d = norm(&sub(mu.position(i), mu.position(j)));
                if (phi[i] - phi[j]).abs() > d + BL_FEAS_TOL {
                    return Err(CoreError::LpFailure(format!(
                        "optimizer violates Lipschitz constraint between atoms {i} and {j}"
                    )));
                }
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------
// Chain dynamic program (one dimension).
// ---------------------------------------------------------------------

/// Concave piecewise-linear function on [-1, 1]: breakpoints sorted by
/// position, linear interpolation between them.
struct ConcavePl {
    pts: Vec<(f64, f64)>,
}

impl ConcavePl {
    fn linear(c: f64) -> Self {
        Self {
            pts: vec![(-1.0, -c), (1.0, c)],
        }
    }

    fn eval(&self, x: f64) -> f64 {
        let pts = &self.pts;
        if x <= pts[0].0 {
            return pts[0].1;
        }
        if x >= pts[pts.len() - 1].0 {
            return pts[pts.len() - 1].1;
        }
        let hi = pts.partition_point(|&(p, _)| p < x);
        let (x0, v0) = pts[hi - 1];
        let (x1, v1) = pts[hi];
        if x1 == x0 {
            return v0.max(v1);
        }
        v0 + (v1 - v0) * (x - x0) / (x1 - x0)
    }

    /// Maximum value and the (possibly degenerate) plateau attaining it.
    fn peak(&self) -> (f64, f64, f64) {
        let vmax = self
            .pts
            .iter()
            .map(|&(_, v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let tol = 1e-13 * (1.0 + vmax.abs());
        let lo = self
            .pts
            .iter()
            .find(|&&(_, v)| v >= vmax - tol)
            .expect("nonempty")
            .0;
        let hi = self
            .pts
            .iter()
            .rev()
            .find(|&&(_, v)| v >= vmax - tol)
            .expect("nonempty")
            .0;
        (lo, hi, vmax)
    }

    /// Sliding-window maximum `C(x) = max { B(y) : |y - x| <= g }`,
    /// restricted back to [-1, 1]. For a concave function this expands
    /// the peak plateau by `g` on both sides and shifts the rising and
    /// falling branches outward.
    fn window_max(&self, g: f64) -> Self {
        let (lo, hi, vmax) = self.peak();
        let mut ext: Vec<(f64, f64)> = Vec::with_capacity(self.pts.len() + 2);
        for &(p, v) in &self.pts {
            if p < lo {
                ext.push((p - g, v));
            }
        }
        ext.push((lo - g, vmax));
        ext.push((hi + g, vmax));
        for &(p, v) in &self.pts {
            if p > hi {
                ext.push((p + g, v));
            }
        }
        let extended = ConcavePl { pts: ext };
        // Clip the extended domain back to [-1, 1].
        let vl = extended.eval(-1.0);
        let vr = extended.eval(1.0);
        let mut pts = Vec::with_capacity(extended.pts.len() + 2);
        pts.push((-1.0, vl));
        for &(p, v) in &extended.pts {
            if p > -1.0 && p < 1.0 {
                pts.push((p, v));
            }
        }
        pts.push((1.0, vr));
        ConcavePl { pts }
    }

    fn add_linear(&mut self, c: f64) {
        for (p, v) in &mut self.pts {
            *v += c * *p;
        }
    }
}

/// Maximises `sum c_i phi_i` subject to `|phi_i| <= 1` and the adjacent
/// constraints `|phi_{i+1} - phi_i| <= x_{i+1} - x_i` on sorted
/// positions (which imply all pairwise constraints by telescoping).
/// Backward pass builds concave value functions `B_i(phi) = c_i phi +
/// max_{|psi - phi| <= gap_i} B_{i+1}(psi)`; the forward pass recovers
/// an optimizer by clamping each peak plateau into the reachable window.
fn chain_dp(xs: &[f64], cs: &[f64], want_optimizer: bool) -> (f64, Option<Vec<f64>>) {
    let k = cs.len();
    // peaks[i] = peak plateau of B_i, recorded during the backward pass.
    let mut peaks = vec![(0.0, 0.0); k];
    let mut b = ConcavePl::linear(cs[k - 1]);
    {
        let (lo, hi, _) = b.peak();
        peaks[k - 1] = (lo, hi);
    }
    for i in (0..k - 1).rev() {
        let gap = xs[i + 1] - xs[i];
        b = b.window_max(gap);
        b.add_linear(cs[i]);
        let (lo, hi, _) = b.peak();
        peaks[i] = (lo, hi);
    }
    let (lo0, _, value) = b.peak();
    if !want_optimizer {
        return (value, None);
    }
    let mut phi = vec![0.0; k];
    phi[0] = lo0;
    for i in 1..k {
        let gap = xs[i] - xs[i - 1];
        let w_lo = (phi[i - 1] - gap).max(-1.0);
        let w_hi = (phi[i - 1] + gap).min(1.0);
        let (p_lo, p_hi) = peaks[i];
        phi[i] = if p_lo > w_hi {
            w_hi
        } else if p_hi < w_lo {
            w_lo
        } else {
            p_lo.max(w_lo)
        };
    }
    (value, Some(phi))
}

// ---------------------------------------------------------------------
// Simplex path with lazy constraint generation (dimension >= 2).
// ---------------------------------------------------------------------

const MAX_WORKING_PAIRS: usize = 3000;
const MAX_ROUNDS: usize = 200;

fn solve_via_simplex(
    mu: &SignedDiscreteMeasure,
    cs: &[f64],
) -> Result<(Vec<f64>, LpStatus, usize)> {
    let k = mu.n_atoms();
    // Candidate pairs: only those closer than 2 can ever bind.
    let mut candidates: Vec<(usize, usize, f64)> = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            let d = norm(&sub(mu.position(i), mu.position(j)));
            if d < 2.0 {
                candidates.push((i, j, d));
            }
        }
    }
    let mut working: Vec<(usize, usize, f64)> = Vec::new();
    let mut in_working = vec![false; candidates.len()];
    let mut total_iterations = 0;
    for _round in 0..MAX_ROUNDS {
        let m = working.len();
        let n = k + m;
        let mut a = vec![0.0; m * n];
        let mut b = vec![0.0; m];
        let mut c = vec![0.0; n];
        let mut lower = vec![0.0; n];
        let mut upper = vec![0.0; n];
        c[..k].copy_from_slice(cs);
        for j in 0..k {
            lower[j] = -1.0;
            upper[j] = 1.0;
        }
        for (p, &(i, j, d)) in working.iter().enumerate() {
            a[p * n + i] = 1.0;
            a[p * n + j] = -1.0;
            a[p * n + k + p] = -1.0;
            b[p] = 0.0;
            lower[k + p] = -d;
            upper[k + p] = d;
        }
        let basis: Vec<usize> = (k..k + m).collect();
        let at_upper = vec![false; n];
        let lp = BoundedLp {
            n_rows: m,
            n_cols: n,
            a: &a,
            b: &b,
            c: &c,
            lower: &lower,
            upper: &upper,
        };
        let max_iters = 50 * (n + m) + 2000;
        let sol = solve_bounded_lp(&lp, &basis, &at_upper, max_iters)?;
        total_iterations += sol.iterations;
        let phi = sol.x[..k].to_vec();
        // Violation scan over the full candidate pool.
        let mut newly: Vec<(usize, f64)> = Vec::new();
        for (idx, &(i, j, d)) in candidates.iter().enumerate() {
            if in_working[idx] {
                continue;
            }
            let viol = (phi[i] - phi[j]).abs() - d;
            if viol > BL_FEAS_TOL {
                newly.push((idx, viol));
            }
        }
        if newly.is_empty() {
            let status = match sol.status {
                SimplexStatus::Optimal => LpStatus::Optimal,
                SimplexStatus::IterationLimit => LpStatus::IterationLimit,
            };
            return Ok((phi, status, total_iterations));
        }
        newly.sort_by(|l, r| r.1.total_cmp(&l.1).then(l.0.cmp(&r.0)));
        let budget = k.max(64).min(newly.len());
        for &(idx, _) in &newly[..budget] {
            in_working[idx] = true;
            working.push(candidates[idx]);
        }
        if working.len() > MAX_WORKING_PAIRS {
            return Err(CoreError::LpFailure(format!(
                "active Lipschitz constraint set exceeded {MAX_WORKING_PAIRS} pairs"
            )));
        }
    }
    Err(CoreError::LpFailure(
        "constraint generation did not converge".into(),
    ))
}
