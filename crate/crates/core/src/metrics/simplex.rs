//! A dense bounded-variable revised simplex solver (maximisation form)
//! with Bland's anti-cycling pivot rule. Small and self-contained: the
//! only LP instances in this crate are the pairwise-constraint programs
//! behind the bounded-Lipschitz norms, which have at most a few thousand
//! rows after constraint pruning.

use crate::{CoreError, Result};

/// `maximize c.x  subject to  A x = b,  lower <= x <= upper`.
///
/// `a` is row-major with `n_rows * n_cols` entries. Equality rows are
/// expected to carry their own slack columns (with finite bounds) so
/// that an all-slack starting basis is feasible.
#[derive(Clone, Copy, Debug)]
pub struct BoundedLp<'a> {
    pub n_rows: usize,
    pub n_cols: usize,
    pub a: &'a [f64],
    pub b: &'a [f64],
    pub c: &'a [f64],
    pub lower: &'a [f64],
    pub upper: &'a [f64],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SimplexStatus {
    Optimal,
    /// The iteration cap was reached; the returned point is feasible and
    /// its objective is a valid lower bound on the optimum.
    IterationLimit,
}

#[derive(Clone, Debug)]
pub struct SimplexSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub status: SimplexStatus,
}

const REDUCED_COST_TOL: f64 = 1e-9;
const RATIO_TOL: f64 = 1e-11;
const PIVOT_TOL: f64 = 1e-11;
const FEAS_TOL: f64 = 1e-7;
const REFACTOR_EVERY: usize = 200;

/// Solves the LP from a caller-supplied starting point: `basis` names
/// one column per row (the matrix they form must be invertible) and
/// `at_upper[j]` places each nonbasic column at its upper or lower
/// bound. The start must be feasible.
pub fn solve_bounded_lp(
    lp: &BoundedLp,
    basis: &[usize],
    at_upper: &[bool],
    max_iters: usize,
) -> Result<SimplexSolution> {
    let (m, n) = (lp.n_rows, lp.n_cols);
    if lp.a.len() != m * n
        || lp.b.len() != m
        || lp.c.len() != n
        || lp.lower.len() != n
        || lp.upper.len() != n
        || basis.len() != m
        || at_upper.len() != n
    {
        return Err(CoreError::LpFailure("inconsistent LP dimensions".into()));
    }
    for j in 0..n {
        if lp.lower[j] > lp.upper[j] {
            return Err(CoreError::LpFailure(format!(
                "empty bound interval on column {j}"
            )));
        }
    }

    let mut basis = basis.to_vec();
    let mut at_upper = at_upper.to_vec();
    let mut in_basis = vec![false; n];
    for &j in &basis {
        if j >= n || in_basis[j] {
            return Err(CoreError::LpFailure("invalid starting basis".into()));
        }
        in_basis[j] = true;
    }

    let mut binv = invert_basis(lp, &basis)?;
    let mut x = vec![0.0; n];
    recompute_point(lp, &basis, &in_basis, &at_upper, &binv, &mut x);
    for (j, &xj) in x.iter().enumerate() {
        if xj < lp.lower[j] - FEAS_TOL || xj > lp.upper[j] + FEAS_TOL {
            return Err(CoreError::LpFailure(format!(
                "starting basis is infeasible at column {j}: {xj} outside [{}, {}]",
                lp.lower[j], lp.upper[j]
            )));
        }
    }

    let mut iterations = 0;
    let mut pivots_since_refactor = 0;
    let mut work = vec![0.0; m];
    while iterations < max_iters {
        // Dual prices y = c_B B^-1.
        let mut y = vec![0.0; m];
        for (k, &bk) in basis.iter().enumerate() {
            let cb = lp.c[bk];
            if cb != 0.0 {
                for t in 0..m {
                    y[t] += cb * binv[k * m + t];
                }
            }
        }
        // Bland: first eligible nonbasic column by index.
        let mut entering = None;
        for j in 0..n {
            if in_basis[j] || lp.lower[j] == lp.upper[j] {
                continue;
            }
            let mut rc = lp.c[j];
            for t in 0..m {
                rc -= y[t] * lp.a[t * n + j];
            }
            if (!at_upper[j] && rc > REDUCED_COST_TOL) || (at_upper[j] && rc < -REDUCED_COST_TOL) {
                entering = Some(j);
                break;
            }
        }
        let e = match entering {
            Some(e) => e,
            None => {
                recompute_point(lp, &basis, &in_basis, &at_upper, &binv, &mut x);
                let objective = dot_objective(lp, &x);
                return Ok(SimplexSolution {
                    x,
                    objective,
                    iterations,
                    status: SimplexStatus::Optimal,
                });
            }
        };
        iterations += 1;

        // Direction of basic variables as x_e moves by sigma * t, t >= 0.
        let sigma: f64 = if at_upper[e] { -1.0 } else { 1.0 };
        for (k, wk) in work.iter_mut().enumerate() {
            let mut s = 0.0;
            for t in 0..m {
                s += binv[k * m + t] * lp.a[t * n + e];
            }
            *wk = s;
        }

        // Ratio test: either the entering column flips to its opposite
        // bound, or a basic variable hits one of its bounds first.
        let t_flip = lp.upper[e] - lp.lower[e];
        let mut t_best = t_flip;
        let mut leave: Option<(usize, bool)> = None; // (basis row, leaves at upper)
        for k in 0..m {
            let rate = -sigma * work[k]; // d x_basis[k] / dt
            let bk = basis[k];
            let (t_k, to_upper) = if rate > RATIO_TOL {
                ((lp.upper[bk] - x[bk]).max(0.0) / rate, true)
            } else if rate < -RATIO_TOL {
                ((x[bk] - lp.lower[bk]).max(0.0) / -rate, false)
            } else {
                continue;
            };
            if t_k < t_best - RATIO_TOL {
                t_best = t_k;
                leave = Some((k, to_upper));
            } else if t_k < t_best + RATIO_TOL {
                // Bland tie-break: smallest leaving variable index.
                if let Some((kc, _)) = leave {
                    if bk < basis[kc] {
                        leave = Some((k, to_upper));
                    }
                } else if t_k <= t_flip {
                    leave = Some((k, to_upper));
                }
            }
        }

        match leave {
            None => {
                // Bound flip: no basis change.
                let t = t_flip;
                if !t.is_finite() {
                    return Err(CoreError::LpFailure(
                        "unbounded direction in a box-constrained LP".into(),
                    ));
                }
                for k in 0..m {
                    x[basis[k]] += -sigma * work[k] * t;
                }
                x[e] = if at_upper[e] { lp.lower[e] } else { lp.upper[e] };
                at_upper[e] = !at_upper[e];
            }
            Some((r, to_upper)) => {
                let t = t_best.max(0.0);
                let pivot = work[r];
                if pivot.abs() < PIVOT_TOL {
                    return Err(CoreError::LpFailure(format!(
                        "vanishing pivot {pivot} at row {r}"
                    )));
                }
                for k in 0..m {
                    x[basis[k]] += -sigma * work[k] * t;
                }
                x[e] = (if at_upper[e] { lp.upper[e] } else { lp.lower[e] }) + sigma * t;
                let lv = basis[r];
                x[lv] = if to_upper { lp.upper[lv] } else { lp.lower[lv] };
                at_upper[lv] = to_upper;
                in_basis[lv] = false;
                in_basis[e] = true;
                basis[r] = e;
                // binv <- E binv with the eta column derived from work.
                let inv_pivot = 1.0 / pivot;
                for t_col in 0..m {
                    binv[r * m + t_col] *= inv_pivot;
                }
                for k in 0..m {
                    if k == r {
                        continue;
                    }
                    let f = work[k];
                    if f != 0.0 {
                        for t_col in 0..m {
                            binv[k * m + t_col] -= f * binv[r * m + t_col];
                        }
                    }
                }
                pivots_since_refactor += 1;
                if pivots_since_refactor >= REFACTOR_EVERY {
                    binv = invert_basis(lp, &basis)?;
                    recompute_point(lp, &basis, &in_basis, &at_upper, &binv, &mut x);
                    pivots_since_refactor = 0;
                }
            }
        }
    }

    recompute_point(lp, &basis, &in_basis, &at_upper, &binv, &mut x);
    let objective = dot_objective(lp, &x);
    Ok(SimplexSolution {
        x,
        objective,
        iterations,
        status: SimplexStatus::IterationLimit,
    })
}

fn dot_objective(lp: &BoundedLp, x: &[f64]) -> f64 {
    let mut acc = crate::numerics::KahanSum::new();
    for (cj, xj) in lp.c.iter().zip(x) {
        acc.add(cj * xj);
    }
    acc.value()
}

/// Gauss-Jordan inverse of the basis matrix (columns `basis` of A).
fn invert_basis(lp: &BoundedLp, basis: &[usize]) -> Result<Vec<f64>> {
    let m = lp.n_rows;
    let n = lp.n_cols;
    let mut mat = vec![0.0; m * m];
    for (k, &j) in basis.iter().enumerate() {
        for t in 0..m {
            mat[t * m + k] = lp.a[t * n + j];
        }
    }
    let mut inv = vec![0.0; m * m];
    for k in 0..m {
        inv[k * m + k] = 1.0;
    }
    for col in 0..m {
        let mut piv = col;
        for r in col + 1..m {
            if mat[r * m + col].abs() > mat[piv * m + col].abs() {
                piv = r;
            }
        }
        if mat[piv * m + col].abs() < PIVOT_TOL {
            return Err(CoreError::LpFailure("singular basis matrix".into()));
        }
        if piv != col {
            for t in 0..m {
                mat.swap(col * m + t, piv * m + t);
                inv.swap(col * m + t, piv * m + t);
            }
        }
        let d = mat[col * m + col];
        for t in 0..m {
            mat[col * m + t] /= d;
            inv[col * m + t] /= d;
        }
        for r in 0..m {
            if r == col {
                continue;
            }
            let f = mat[r * m + col];
            if f != 0.0 {
                for t in 0..m {
                    mat[r * m + t] -= f * mat[col * m + t];
                    inv[r * m + t] -= f * inv[col * m + t];
                }
            }
        }
    }
    Ok(inv)
}

/// Sets nonbasic columns to their resting bounds and solves for the
/// basic values.
fn recompute_point(
    lp: &BoundedLp,
    basis: &[usize],
    in_basis: &[bool],
    at_upper: &[bool],
    binv: &[f64],
    x: &mut [f64],
) {
    let (m, n) = (lp.n_rows, lp.n_cols);
    for j in 0..n {
        if !in_basis[j] {
            x[j] = if at_upper[j] { lp.upper[j] } else { lp.lower[j] };
        }
    }
    // r = b - N x_N
    let mut r = lp.b.to_vec();
    for j in 0..n {
        if !in_basis[j] && x[j] != 0.0 {
            for t in 0..m {
                r[t] -= lp.a[t * n + j] * x[j];
            }
        }
    }
    for k in 0..m {
        let mut s = 0.0;
        for t in 0..m {
            s += binv[k * m + t] * r[t];
        }
        x[basis[k]] = s;
    }
}
