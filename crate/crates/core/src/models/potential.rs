//! Built-in potential families `V` for targets `exp(-V)/Z`.
//!
//! Every family is shifted by an additive constant so that `min V = 0`;
//! the shift cancels in the normalised density and keeps the weight
//! `1 + V` used by the weighted norms bounded below by one.

use crate::numerics::{dot, norm, norm_sq};
use crate::{CoreError, Result};

/// Numerically stable `log(1 + exp(u))`.
fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

/// Logistic sigmoid `1 / (1 + exp(-u))`.
fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// One isotropic Gaussian component of a mixture.
#[derive(Clone, Debug)]
pub struct MixtureComponent {
    pub mean: Vec<f64>,
    pub std: f64,
    pub weight: f64,
}

/// Labelled design matrix for the logistic-regression posterior.
///
/// Labels are {0, 1}; rows are feature vectors of a common dimension.
#[derive(Clone, Debug)]
pub struct LogisticData {
    /// Signs `2 y_i - 1` precomputed from the labels.
    signs: Vec<f64>,
    features: Vec<Vec<f64>>,
    dim: usize,
}

impl LogisticData {
    pub fn new(labels: &[f64], features: Vec<Vec<f64>>) -> Result<Self> {
        if labels.len() != features.len() || labels.is_empty() {
            return Err(CoreError::InvalidArgument(format!(
                "logistic data needs matching non-empty labels/rows, got {} labels and {} rows",
                labels.len(),
                features.len()
            )));
        }
        let dim = features[0].len();
        if dim == 0 {
            return Err(CoreError::InvalidArgument(
                "logistic rows must have at least one feature".into(),
            ));
        }
        for row in &features {
            if row.len() != dim {
                return Err(CoreError::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
        }
        let mut signs = Vec::with_capacity(labels.len());
        for &y in labels {
            if y == 0.0 {
                signs.push(-1.0);
            } else if y == 1.0 {
                signs.push(1.0);
            } else {
                return Err(CoreError::InvalidArgument(format!(
                    "logistic labels must be 0 or 1, got {y}"
                )));
            }
        }
        Ok(Self {
            signs,
            features,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.signs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signs.is_empty()
    }
}

/// A confining potential `V: R^d -> [0, inf)` with analytic derivatives.
#[derive(Clone, Debug)]
pub enum Potential {
    /// `V = 0` on its whole domain (uniform target on a box).
    Zero { dim: usize },
    /// `V(x) = |x|^2 / 2` — standard Gaussian target, growth exponent 2.
    Quadratic { dim: usize },
    /// `V(x) = sqrt(delta^2 + |x|^2) - delta` — linear growth (exponent 1)
    /// smoothed near the origin.
    SmoothedAbs { dim: usize, delta: f64 },
    /// `V(x) = |x|^4` — growth exponent 4; the counterexample family for
    /// the kernel-potential boundedness condition.
    Quartic { dim: usize },
    /// `V(x) = -log(sum_k w_k N(x; m_k, s_k^2 I)) - shift` — growth
    /// exponent 2 with a multi-modal landscape.
    GaussianMixture {
        dim: usize,
        components: Vec<MixtureComponent>,
        shift: f64,
    },
    /// Negative log-posterior of Bayesian logistic regression with a
    /// centred Gaussian prior of standard deviation `prior_std`.
    LogisticPosterior {
        data: LogisticData,
        prior_std: f64,
        shift: f64,
    },
}

impl Potential {
    pub fn zero(dim: usize) -> Self {
        Potential::Zero { dim }
    }

    pub fn quadratic(dim: usize) -> Self {
        Potential::Quadratic { dim }
    }

    pub fn smoothed_abs(dim: usize, delta: f64) -> Result<Self> {
        if delta <= 0.0 {
            return Err(CoreError::InvalidArgument(format!(
                "smoothing width must be positive, got {delta}"
            )));
        }
        Ok(Potential::SmoothedAbs { dim, delta })
    }

    pub fn quartic(dim: usize) -> Self {
        Potential::Quartic { dim }
    }

    /// Builds the mixture family; the nonnegativity shift is located by
    /// damped Newton descent started from every component mean.
    pub fn gaussian_mixture(dim: usize, components: Vec<MixtureComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(CoreError::InvalidArgument(
                "mixture needs at least one component".into(),
            ));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if !(total > 0.0) {
            return Err(CoreError::InvalidArgument(
                "mixture weights must have positive sum".into(),
            ));
        }
        let mut comps = components;
        for c in &mut comps {
            if c.mean.len() != dim {
                return Err(CoreError::DimensionMismatch {
                    expected: dim,
                    got: c.mean.len(),
                });
            }
            if !(c.std > 0.0) || !(c.weight > 0.0) {
                return Err(CoreError::InvalidArgument(
                    "mixture stds and weights must be positive".into(),
                ));
            }
            c.weight /= total;
        }
        let mut pot = Potential::GaussianMixture {
            dim,
            components: comps,
            shift: 0.0,
        };
        let mut best = f64::INFINITY;
        let starts: Vec<Vec<f64>> = match &pot {
            Potential::GaussianMixture { components, .. } => {
                components.iter().map(|c| c.mean.clone()).collect()
            }
            _ => unreachable!(),
        };
        for start in starts {
            let v = newton_minimise(&pot, &start)?;
            if v < best {
                best = v;
            }
        }
        if let Potential::GaussianMixture { shift, .. } = &mut pot {
            *shift = best;
        }
        Ok(pot)
    }

    /// Builds the logistic posterior; the shift is the value at the MAP
    /// point, found by Newton iteration on the strictly convex objective.
    pub fn logistic_posterior(data: LogisticData, prior_std: f64) -> Result<Self> {
        if !(prior_std > 0.0) {
            return Err(CoreError::InvalidArgument(format!(
                "prior standard deviation must be positive, got {prior_std}"
            )));
        }
        let dim = data.dim;
        let mut pot = Potential::LogisticPosterior {
            data,
            prior_std,
            shift: 0.0,
        };
        let map_value = newton_minimise(&pot, &vec![0.0; dim])?;
        if let Potential::LogisticPosterior { shift, .. } = &mut pot {
            *shift = map_value;
        }
        Ok(pot)
    }

    pub fn dim(&self) -> usize {
        match self {
            Potential::Zero { dim }
            | Potential::Quadratic { dim }
            | Potential::SmoothedAbs { dim, .. }
            | Potential::Quartic { dim }
            | Potential::GaussianMixture { dim, .. } => *dim,
            Potential::LogisticPosterior { data, .. } => data.dim,
        }
    }

    /// Stable identifier of the family, used in reports and run metadata.
    pub fn family(&self) -> &'static str {
        match self {
            Potential::Zero { .. } => "zero",
            Potential::Quadratic { .. } => "quadratic",
            Potential::SmoothedAbs { .. } => "smoothed-abs",
            Potential::Quartic { .. } => "quartic",
            Potential::GaussianMixture { .. } => "gaussian-mixture-logdensity",
            Potential::LogisticPosterior { .. } => "logistic-posterior",
        }
    }

    /// Declared polynomial growth exponent `p` of the family.
    pub fn declared_p(&self) -> f64 {
        match self {
            Potential::Zero { .. } => 0.0,
            Potential::Quadratic { .. } => 2.0,
            Potential::SmoothedAbs { .. } => 1.0,
            Potential::Quartic { .. } => 4.0,
            Potential::GaussianMixture { .. } => 2.0,
            Potential::LogisticPosterior { .. } => 2.0,
        }
    }

    /// Potential value, shifted so the family minimum is zero.
    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        match self {
            Potential::Zero { .. } => 0.0,
            Potential::Quadratic { .. } => 0.5 * norm_sq(x),
            Potential::SmoothedAbs { delta, .. } => (delta * delta + norm_sq(x)).sqrt() - delta,
            Potential::Quartic { .. } => {
                let r2 = norm_sq(x);
                r2 * r2
            }
            Potential::GaussianMixture {
                components, shift, ..
            } => mixture_raw(components, x) - shift,
            Potential::LogisticPosterior {
                data,
                prior_std,
                shift,
            } => logistic_raw(data, *prior_std, x) - shift,
        }
    }

    /// Gradient of the (shift-invariant) potential.
    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.dim());
        match self {
            Potential::Zero { dim } => vec![0.0; *dim],
            Potential::Quadratic { .. } => x.to_vec(),
            Potential::SmoothedAbs { delta, .. } => {
                let s = (delta * delta + norm_sq(x)).sqrt();
                x.iter().map(|&xi| xi / s).collect()
            }
            Potential::Quartic { .. } => {
                let r2 = norm_sq(x);
                x.iter().map(|&xi| 4.0 * r2 * xi).collect()
            }
            Potential::GaussianMixture { components, .. } => {
                let (_, grad, _) = mixture_derivatives(components, x, false);
                grad
            }
            Potential::LogisticPosterior {
                data, prior_std, ..
            } => {
                let mut g: Vec<f64> = x.iter().map(|&t| t / (prior_std * prior_std)).collect();
                for (sign, row) in data.signs.iter().zip(&data.features) {
                    let margin = sign * dot(row, x);
                    let c = -sign * sigmoid(-margin);
                    for (gi, &f) in g.iter_mut().zip(row) {
                        *gi += c * f;
                    }
                }
                g
            }
        }
    }

    /// Hessian, row-major `dim x dim`.
    pub fn hess(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.dim());
        let d = self.dim();
        match self {
            Potential::Zero { .. } => vec![0.0; d * d],
            Potential::Quadratic { .. } => identity(d),
            Potential::SmoothedAbs { delta, .. } => {
                let s2 = delta * delta + norm_sq(x);
                let s = s2.sqrt();
                let mut h = identity(d);
                for i in 0..d {
                    for j in 0..d {
                        h[i * d + j] = h[i * d + j] / s - x[i] * x[j] / (s2 * s);
                    }
                }
                h
            }
            Potential::Quartic { .. } => {
                let r2 = norm_sq(x);
                let mut h = vec![0.0; d * d];
                for i in 0..d {
                    for j in 0..d {
                        h[i * d + j] = 8.0 * x[i] * x[j] + if i == j { 4.0 * r2 } else { 0.0 };
                    }
                }
                h
            }
            Potential::GaussianMixture { components, .. } => {
                let (_, _, hess) = mixture_derivatives(components, x, true);
                hess
            }
            Potential::LogisticPosterior {
                data, prior_std, ..
            } => {
                let mut h = vec![0.0; d * d];
                for i in 0..d {
                    h[i * d + i] = 1.0 / (prior_std * prior_std);
                }
                for (sign, row) in data.signs.iter().zip(&data.features) {
                    let margin = sign * dot(row, x);
                    let p = sigmoid(margin);
                    let w = p * (1.0 - p);
                    for i in 0..d {
                        for j in 0..d {
                            h[i * d + j] += w * row[i] * row[j];
                        }
                    }
                }
                h
            }
        }
    }
}

fn identity(d: usize) -> Vec<f64> {
    let mut h = vec![0.0; d * d];
    for i in 0..d {
        h[i * d + i] = 1.0;
    }
    h
}

/// Unshifted mixture potential `-log(sum_k w_k N(x; m_k, s_k^2 I))`.
fn mixture_raw(components: &[MixtureComponent], x: &[f64]) -> f64 {
    // log-sum-exp over component log-densities for stability far out.
    let d = x.len() as f64;
    let logs: Vec<f64> = components
        .iter()
        .map(|c| {
            let z2: f64 = x
                .iter()
                .zip(&c.mean)
                .map(|(&xi, &mi)| (xi - mi) * (xi - mi))
                .sum();
            c.weight.ln()
                - 0.5 * z2 / (c.std * c.std)
                - d * c.std.ln()
                - 0.5 * d * (2.0 * std::f64::consts::PI).ln()
        })
        .collect();
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logs.iter().map(|&l| (l - m).exp()).sum();
    -(m + sum.ln())
}

/// Gradient and (optionally) Hessian of the unshifted mixture potential.
///
/// With responsibilities `r_k(x)` and `z_k = (x - m_k)/s_k^2`:
/// `grad V = sum_k r_k z_k` and
/// `hess V = sum_k r_k (I/s_k^2 - z_k z_k^T) + (grad V)(grad V)^T`.
fn mixture_derivatives(
    components: &[MixtureComponent],
    x: &[f64],
    with_hess: bool,
) -> (f64, Vec<f64>, Vec<f64>) {
    let d = x.len();
    let value = mixture_raw(components, x);
    // Responsibilities via the same log-sum-exp normalisation.
    let logs: Vec<f64> = components
        .iter()
        .map(|c| {
            let z2: f64 = x
                .iter()
                .zip(&c.mean)
                .map(|(&xi, &mi)| (xi - mi) * (xi - mi))
                .sum();
            c.weight.ln() - 0.5 * z2 / (c.std * c.std) - (d as f64) * c.std.ln()
        })
        .collect();
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut resp: Vec<f64> = logs.iter().map(|&l| (l - m).exp()).collect();
    let total: f64 = resp.iter().sum();
    for r in &mut resp {
        *r /= total;
    }

    let mut grad = vec![0.0; d];
    for (r, c) in resp.iter().zip(components) {
        for i in 0..d {
            grad[i] += r * (x[i] - c.mean[i]) / (c.std * c.std);
        }
    }

    let mut hess = Vec::new();
    if with_hess {
        hess = vec![0.0; d * d];
        for (r, c) in resp.iter().zip(components) {
            let s2 = c.std * c.std;
            for i in 0..d {
                hess[i * d + i] += r / s2;
                for j in 0..d {
                    hess[i * d + j] -= r * (x[i] - c.mean[i]) * (x[j] - c.mean[j]) / (s2 * s2);
                }
            }
        }
        for i in 0..d {
            for j in 0..d {
                hess[i * d + j] += grad[i] * grad[j];
            }
        }
    }
    (value, grad, hess)
}

/// Unshifted logistic negative log-posterior.
fn logistic_raw(data: &LogisticData, prior_std: f64, x: &[f64]) -> f64 {
    let mut v = 0.5 * norm_sq(x) / (prior_std * prior_std);
    for (sign, row) in data.signs.iter().zip(&data.features) {
        v += softplus(-sign * dot(row, x));
    }
    v
}

/// Damped (Levenberg-regularised) Newton descent used to locate family
/// minima at construction time. Returns the minimal unshifted value.
fn newton_minimise(pot: &Potential, start: &[f64]) -> Result<f64> {
    let d = start.len();
    let raw = |x: &[f64]| -> f64 {
        match pot {
            Potential::GaussianMixture { components, .. } => mixture_raw(components, x),
            Potential::LogisticPosterior {
                data, prior_std, ..
            } => logistic_raw(data, *prior_std, x),
            _ => pot.eval(x),
        }
    };
    let mut x = start.to_vec();
    let mut fx = raw(&x);
    for _ in 0..200 {
        let g = pot.grad(&x);
        if norm(&g) < 1e-13 {
            break;
        }
        let h = pot.hess(&x);
        let mut lambda = 0.0_f64;
        let mut stepped = false;
        for _ in 0..40 {
            let mut hreg = h.clone();
            for i in 0..d {
                hreg[i * d + i] += lambda;
            }
            if let Some(step) = solve_dense(&hreg, &g, d) {
                let cand: Vec<f64> = x.iter().zip(&step).map(|(&xi, &si)| xi - si).collect();
                let fc = raw(&cand);
                if fc.is_finite() && fc < fx {
                    x = cand;
                    fx = fc;
                    stepped = true;
                    break;
                }
            }
            lambda = if lambda == 0.0 { 1e-6 } else { lambda * 10.0 };
        }
        if !stepped {
            break;
        }
    }
    if !fx.is_finite() {
        return Err(CoreError::PotentialOverflow {
            radius: norm(&x),
            value: fx,
        });
    }
    Ok(fx)
}

/// Gaussian elimination with partial pivoting for the tiny dense systems
/// in the Newton minimiser. Returns `None` when the matrix is singular.
fn solve_dense(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut m = a.to_vec();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let mut piv = col;
        for row in col + 1..n {
            if m[row * n + col].abs() > m[piv * n + col].abs() {
                piv = row;
            }
        }
        if m[piv * n + col].abs() < 1e-300 {
            return None;
        }
        if piv != col {
            for k in 0..n {
                m.swap(col * n + k, piv * n + k);
            }
            rhs.swap(col, piv);
        }
        let diag = m[col * n + col];
        for row in col + 1..n {
            let f = m[row * n + col] / diag;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                m[row * n + k] -= f * m[col * n + k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for k in row + 1..n {
            acc -= m[row * n + k] * x[k];
        }
        x[row] = acc / m[row * n + row];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_grad(pot: &Potential, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[i] += h;
                xm[i] -= h;
                (pot.eval(&xp) - pot.eval(&xm)) / (2.0 * h)
            })
            .collect()
    }

    fn fd_hess_row(pot: &Potential, x: &[f64], i: usize, h: f64) -> Vec<f64> {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += h;
        xm[i] -= h;
        let gp = pot.grad(&xp);
        let gm = pot.grad(&xm);
        gp.iter().zip(&gm).map(|(&a, &b)| (a - b) / (2.0 * h)).collect()
    }

    fn check_derivatives(pot: &Potential, probes: &[Vec<f64>]) {
        let d = pot.dim();
        for x in probes {
            let g = pot.grad(x);
            let gfd = fd_grad(pot, x, 1e-5);
            let scale = 1.0 + g.iter().map(|v| v.abs()).fold(0.0, f64::max);
            for i in 0..d {
                assert!(
                    (g[i] - gfd[i]).abs() < 2e-6 * scale,
                    "{} grad[{i}] at {x:?}: {} vs fd {}",
                    pot.family(),
                    g[i],
                    gfd[i]
                );
            }
            let hess = pot.hess(x);
            for i in 0..d {
                let row = fd_hess_row(pot, x, i, 1e-5);
                let hscale = 1.0 + hess.iter().map(|v| v.abs()).fold(0.0, f64::max);
                for j in 0..d {
                    assert!(
                        (hess[i * d + j] - row[j]).abs() < 5e-6 * hscale,
                        "{} hess[{i},{j}] at {x:?}",
                        pot.family()
                    );
                }
            }
        }
    }

    #[test]
    fn quadratic_matches_hand_values() {
        let pot = Potential::quadratic(1);
        assert_eq!(pot.eval(&[2.0]), 2.0);
        assert_eq!(pot.grad(&[2.0]), vec![2.0]);
        assert_eq!(pot.hess(&[2.0]), vec![1.0]);
        assert_eq!(pot.declared_p(), 2.0);
    }

    #[test]
    fn builtin_derivatives_match_finite_differences() {
        let probes1: Vec<Vec<f64>> = vec![vec![0.3], vec![-1.7], vec![4.2]];
        let probes2: Vec<Vec<f64>> = vec![vec![0.3, -0.4], vec![-1.1, 2.0], vec![3.0, 1.5]];

        check_derivatives(&Potential::quadratic(1), &probes1);
        check_derivatives(&Potential::quadratic(2), &probes2);
        check_derivatives(&Potential::smoothed_abs(1, 0.5).unwrap(), &probes1);
        check_derivatives(&Potential::smoothed_abs(2, 0.5).unwrap(), &probes2);
        check_derivatives(&Potential::quartic(1), &probes1);
        check_derivatives(&Potential::quartic(2), &probes2);

        let mix = Potential::gaussian_mixture(
            1,
            vec![
                MixtureComponent {
                    mean: vec![-1.5],
                    std: 0.8,
                    weight: 0.4,
                },
                MixtureComponent {
                    mean: vec![1.0],
                    std: 1.2,
                    weight: 0.6,
                },
            ],
        )
        .unwrap();
        check_derivatives(&mix, &probes1);

        let data = LogisticData::new(
            &[1.0, 0.0, 1.0, 0.0],
            vec![
                vec![0.5, 1.0],
                vec![-1.0, 0.3],
                vec![1.5, -0.2],
                vec![-0.4, -1.1],
            ],
        )
        .unwrap();
        let post = Potential::logistic_posterior(data, 1.0).unwrap();
        check_derivatives(&post, &probes2);
    }

    #[test]
    fn families_are_nonnegative_with_zero_minimum() {
        let mix = Potential::gaussian_mixture(
            1,
            vec![
                MixtureComponent {
                    mean: vec![-2.0],
                    std: 0.7,
                    weight: 0.5,
                },
                MixtureComponent {
                    mean: vec![2.0],
                    std: 1.0,
                    weight: 0.5,
                },
            ],
        )
        .unwrap();
        let mut min_seen = f64::INFINITY;
        for i in 0..=4000 {
            let x = -10.0 + i as f64 * 20.0 / 4000.0;
            let v = mix.eval(&[x]);
            assert!(v >= -1e-9, "mixture dipped to {v} at {x}");
            min_seen = min_seen.min(v);
        }
        assert!(min_seen.abs() < 1e-6, "mixture minimum {min_seen} not ~0");

        let data = LogisticData::new(&[1.0, 0.0], vec![vec![1.0], vec![-0.5]]).unwrap();
        let post = Potential::logistic_posterior(data, 1.0).unwrap();
        let mut min_post = f64::INFINITY;
        let mut arg_min = 0.0;
        for i in 0..=2000 {
            let x = -5.0 + i as f64 * 10.0 / 2000.0;
            let v = post.eval(&[x]);
            assert!(v >= -1e-9);
            if v < min_post {
                min_post = v;
                arg_min = x;
            }
        }
        // The coarse grid misses the MAP point by up to half a spacing;
        // refine around the argmin before asking for a tight zero.
        for i in 0..=2000 {
            let x = arg_min - 0.005 + i as f64 * 0.01 / 2000.0;
            min_post = min_post.min(post.eval(&[x]));
        }
        assert!(min_post.abs() < 1e-10, "posterior minimum {min_post} not ~0");
    }

    #[test]
    fn smoothed_abs_is_zero_at_origin() {
        let pot = Potential::smoothed_abs(2, 0.5).unwrap();
        assert_eq!(pot.eval(&[0.0, 0.0]), 0.0);
        let g = pot.grad(&[0.0, 0.0]);
        assert!(g.iter().all(|&v| v == 0.0));
    }
}
