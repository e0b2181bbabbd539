//! Exact Wasserstein-p distances between discrete measures: the monotone
//! coupling in one dimension, a shortest-augmenting-path assignment
//! solver in general dimension, and a quantile coupling for weighted
//! one-dimensional measures.

use crate::measures::{ParticleEnsemble, SignedDiscreteMeasure};
use crate::numerics::{norm, sub, KahanSum};
use crate::{CoreError, Result};

/// Largest ensemble the O(N^3) assignment solver accepts.
pub const MAX_ASSIGNMENT_SIZE: usize = 4096;

fn validate_pair(a: &ParticleEnsemble, b: &ParticleEnsemble, p: f64) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(CoreError::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    if a.len() != b.len() {
        return Err(CoreError::UnequalEnsembleSizes {
            left: a.len(),
            right: b.len(),
        });
    }
    if p < 1.0 {
        return Err(CoreError::InvalidArgument(format!(
            "Wasserstein order must be >= 1, got {p}"
        )));
    }
    Ok(())
}

/// `W_p` between two equal-size uniform empirical measures on the line:
/// sorts both position lists and pairs them monotonically, which is the
/// optimal coupling in one dimension.
pub fn wasserstein_1d(p: f64, a: &ParticleEnsemble, b: &ParticleEnsemble) -> Result<f64> {
    validate_pair(a, b, p)?;
    if a.dim() != 1 {
        return Err(CoreError::UnsupportedDimension {
            op: "wasserstein_1d",
            max: 1,
            got: a.dim(),
        });
    }
    let mut xs = a.positions_flat().to_vec();
    let mut ys = b.positions_flat().to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let mut acc = KahanSum::new();
    for (x, y) in xs.iter().zip(&ys) {
        acc.add((x - y).abs().powf(p));
    }
    Ok((acc.value() / xs.len() as f64).powf(1.0 / p))
}

/// `W_p` between two equal-size uniform empirical measures in any
/// dimension, solving the N x N assignment problem with costs
/// `|x_i - y_j|^p` by shortest augmenting paths (O(N^3)).
pub fn wasserstein_assignment(p: f64, a: &ParticleEnsemble, b: &ParticleEnsemble) -> Result<f64> {
    validate_pair(a, b, p)?;
    let n = a.len();
    if n > MAX_ASSIGNMENT_SIZE {
        return Err(CoreError::InvalidArgument(format!(
            "assignment solver limited to {MAX_ASSIGNMENT_SIZE} particles, got {n}"
        )));
    }
    let cost = |i: usize, j: usize| -> f64 {
        norm(&sub(a.position(i), b.position(j))).powf(p)
    };
    let total = solve_assignment(n, cost);
    Ok((total / n as f64).powf(1.0 / p))
}

/// Minimum-cost perfect matching on a complete bipartite graph by the
/// shortest-augmenting-path method with dual potentials. Returns the
/// total cost of the optimal assignment.
fn solve_assignment(n: usize, cost: impl Fn(usize, usize) -> f64) -> f64 {
    const UNMATCHED: usize = usize::MAX;
    // row potentials u, column potentials v (virtual column n included),
    // matched_row[j] = row assigned to column j.
    let mut u = vec![0.0_f64; n];
    let mut v = vec![0.0_f64; n + 1];
    let mut matched_row = vec![UNMATCHED; n + 1];
    for row in 0..n {
        matched_row[n] = row;
        let mut j0 = n;
        let mut min_to = vec![f64::INFINITY; n];
        let mut prev = vec![n; n];
        let mut used = vec![false; n + 1];
        // Dijkstra over columns with reduced costs.
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = UNMATCHED;
            for j in 0..n {
                if used[j] {
                    continue;
                }
                let reduced = cost(i0, j) - u[i0] - v[j];
                if reduced < min_to[j] {
                    min_to[j] = reduced;
                    prev[j] = j0;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == UNMATCHED {
                break;
            }
        }
        // Augment along the alternating path back to the virtual column.
        while j0 != n {
            let j1 = prev[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
        }
    }
    let mut total = KahanSum::new();
    for j in 0..n {
        total.add(cost(matched_row[j], j));
    }
    total.value()
}

/// `W_1` between two weighted one-dimensional probability measures via
/// the CDF-difference formula `integral |F_mu - F_nu|`. Both measures
/// must have nonnegative weights and total mass within `1e-6` of one;
/// masses are renormalised to exactly one internally.
pub fn wasserstein1_weighted_1d(
    mu: &SignedDiscreteMeasure,
    nu: &SignedDiscreteMeasure,
) -> Result<f64> {
    for (name, m) in [("left", mu), ("right", nu)] {
        if m.dim() != 1 {
            return Err(CoreError::UnsupportedDimension {
                op: "wasserstein1_weighted_1d",
                max: 1,
                got: m.dim(),
            });
        }
        if m.weights().iter().any(|&w| w < 0.0) {
            return Err(CoreError::InvalidArgument(format!(
                "{name} measure has negative weights"
            )));
        }
        let mass = m.total_mass();
        if (mass - 1.0).abs() > 1e-6 {
            return Err(CoreError::InvalidArgument(format!(
                "{name} measure has mass {mass}, expected a probability measure"
            )));
        }
    }
    let ma = mu.total_mass();
    let mb = nu.total_mass();
    // Merge the two sorted atom lists; between consecutive support
    // points the CDF difference is constant.
    let mut cost = KahanSum::new();
    let mut diff = KahanSum::new();
    let (mut i, mut j) = (0, 0);
    let mut prev: Option<f64> = None;
    while i < mu.n_atoms() || j < nu.n_atoms() {
        let xa = if i < mu.n_atoms() {
            mu.position(i)[0]
        } else {
            f64::INFINITY
        };
        let xb = if j < nu.n_atoms() {
            nu.position(j)[0]
        } else {
            f64::INFINITY
        };
        let x = xa.min(xb);
        if let Some(px) = prev {
            cost.add(diff.value().abs() * (x - px));
        }
        while i < mu.n_atoms() && mu.position(i)[0] == x {
            diff.add(mu.weight(i) / ma);
            i += 1;
        }
        while j < nu.n_atoms() && nu.position(j)[0] == x {
            diff.add(-nu.weight(j) / mb);
            j += 1;
        }
        prev = Some(x);
    }
    Ok(cost.value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ens(points: &[f64]) -> ParticleEnsemble {
        ParticleEnsemble::from_1d(points.to_vec()).unwrap()
    }

    #[test]
    fn identical_ensembles_have_zero_distance() {
        let a = ens(&[0.3, -1.2, 5.0]);
        assert_eq!(wasserstein_1d(1.0, &a, &a).unwrap(), 0.0);
        assert_eq!(wasserstein_assignment(1.0, &a, &a).unwrap(), 0.0);
    }

    #[test]
    fn single_atom_transport_is_the_distance() {
        let a = ens(&[0.0]);
        let b = ens(&[3.0]);
        for p in [1.0, 2.0, 3.5] {
            assert!((wasserstein_1d(p, &a, &b).unwrap() - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn crossing_pairs_use_the_monotone_coupling() {
        // {0,2} vs {1,3}: monotone pairing costs (1+1)/2 = 1; the
        // crossing pairing would cost (3+1)/2 = 2.
        let a = ens(&[0.0, 2.0]);
        let b = ens(&[1.0, 3.0]);
        assert!((wasserstein_1d(1.0, &a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn assignment_matches_sorted_coupling_in_1d() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let n = rng.gen_range(1..=64);
            let a = ens(&(0..n).map(|_| rng.gen_range(-5.0..5.0)).collect::<Vec<_>>());
            let b = ens(&(0..n).map(|_| rng.gen_range(-5.0..5.0)).collect::<Vec<_>>());
            for p in [1.0, 2.0] {
                let d1 = wasserstein_1d(p, &a, &b).unwrap();
                let d2 = wasserstein_assignment(p, &a, &b).unwrap();
                assert!((d1 - d2).abs() < 1e-10, "p={p}: {d1} vs {d2}");
            }
        }
    }

    #[test]
    fn assignment_matches_permutation_brute_force_in_2d() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let perms3: [[usize; 3]; 6] = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        for _ in 0..100 {
            let a = ParticleEnsemble::new(
                2,
                (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            )
            .unwrap();
            let b = ParticleEnsemble::new(
                2,
                (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            )
            .unwrap();
            let p = 1.0;
            let best = perms3
                .iter()
                .map(|perm| {
                    (0..3)
                        .map(|i| norm(&sub(a.position(i), b.position(perm[i]))))
                        .sum::<f64>()
                        / 3.0
                })
                .fold(f64::INFINITY, f64::min);
            let d = wasserstein_assignment(p, &a, &b).unwrap();
            assert!((d - best).abs() < 1e-10, "{d} vs brute force {best}");
        }
    }

    #[test]
    fn order_monotonicity_w1_below_w2() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let n = rng.gen_range(2..=32);
            let a = ens(&(0..n).map(|_| rng.gen_range(-3.0..3.0)).collect::<Vec<_>>());
            let b = ens(&(0..n).map(|_| rng.gen_range(-3.0..3.0)).collect::<Vec<_>>());
            let w1 = wasserstein_1d(1.0, &a, &b).unwrap();
            let w2 = wasserstein_1d(2.0, &a, &b).unwrap();
            assert!(w1 <= w2 + 1e-12, "W1 {w1} > W2 {w2}");
        }
    }

    #[test]
    fn symmetry_of_both_solvers() {
        let a = ens(&[0.1, 1.4, -2.0, 0.9]);
        let b = ens(&[0.6, -0.3, 2.2, -1.7]);
        assert_eq!(
            wasserstein_1d(1.0, &a, &b).unwrap(),
            wasserstein_1d(1.0, &b, &a).unwrap()
        );
        let d_ab = wasserstein_assignment(2.0, &a, &b).unwrap();
        let d_ba = wasserstein_assignment(2.0, &b, &a).unwrap();
        assert!((d_ab - d_ba).abs() < 1e-12);
    }

    #[test]
    fn unequal_sizes_are_rejected() {
        let a = ens(&[0.0]);
        let b = ens(&[0.0, 1.0]);
        assert!(matches!(
            wasserstein_1d(1.0, &a, &b),
            Err(CoreError::UnequalEnsembleSizes { .. })
        ));
    }

    #[test]
    fn weighted_1d_agrees_with_uniform_coupling() {
        let a = ens(&[0.0, 1.0, 4.0, -2.0]);
        let b = ens(&[0.5, 1.5, 3.0, -1.0]);
        let exact = wasserstein_1d(1.0, &a, &b).unwrap();
        let d = wasserstein1_weighted_1d(&a.to_measure(), &b.to_measure()).unwrap();
        assert!((d - exact).abs() < 1e-12, "{d} vs {exact}");
    }

    #[test]
    fn weighted_1d_hand_value_with_unequal_weights() {
        // mu = (3/4) d_0 + (1/4) d_1, nu = d_0: move 1/4 of mass by 1.
        let mu =
            SignedDiscreteMeasure::from_parts(1, vec![0.0, 1.0], vec![0.75, 0.25]).unwrap();
        let nu = SignedDiscreteMeasure::from_parts(1, vec![0.0], vec![1.0]).unwrap();
        let d = wasserstein1_weighted_1d(&mu, &nu).unwrap();
        assert!((d - 0.25).abs() < 1e-15);
    }

    #[test]
    fn weighted_1d_rejects_signed_or_unnormalised_input() {
        let signed =
            SignedDiscreteMeasure::from_parts(1, vec![0.0, 1.0], vec![1.5, -0.5]).unwrap();
        let ok = SignedDiscreteMeasure::from_parts(1, vec![0.0], vec![1.0]).unwrap();
        assert!(wasserstein1_weighted_1d(&signed, &ok).is_err());
        let heavy = SignedDiscreteMeasure::from_parts(1, vec![0.0], vec![2.0]).unwrap();
        assert!(wasserstein1_weighted_1d(&heavy, &ok).is_err());
    }
}
