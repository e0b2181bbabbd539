//! Potential and kernel families plus the checkers for the structural
//! assumptions the stability theory rests on: polynomial growth of `V`,
//! boundedness of the kernel-potential interaction terms, and positive
//! definiteness of `K`.

mod kernel;
mod potential;

pub use kernel::Kernel;
pub use potential::{LogisticData, MixtureComponent, Potential};

use crate::numerics::{dot, linear_fit};
use crate::{CoreError, Result};
use rustfft::{num_complex::Complex, FftPlanner};

/// A numeric witness backing a verdict: what was measured, where, and the
/// value observed there.
#[derive(Clone, Debug)]
pub struct Witness {
    pub label: String,
    pub location: Vec<f64>,
    pub value: f64,
}

/// Outcome of one assumption check. Every verdict — pass or fail — comes
/// with at least one witness and a description of the probe grid used.
#[derive(Clone, Debug)]
pub struct AssumptionReport {
    pub name: String,
    pub passed: bool,
    pub witnesses: Vec<Witness>,
    pub grid: String,
    pub notes: String,
}

/// Result of the growth check: sandwich bounds
/// `(|x|^p - 1)/C <= V(x) <= C (|x|^p + 1)` plus a log-log slope fit.
#[derive(Clone, Debug)]
pub struct GrowthReport {
    pub report: AssumptionReport,
    /// Least-squares slope of `log V` against `log |x|` over the probes.
    pub fitted_slope: f64,
    /// Smallest constant satisfying both sandwich inequalities on the
    /// probe set.
    pub sandwich_c: f64,
}

/// Probe layout for [`check_growth`].
#[derive(Clone, Debug)]
pub struct GrowthProbes {
    /// Radii at which the potential is sampled along each direction.
    pub radii: Vec<f64>,
}

impl Default for GrowthProbes {
    fn default() -> Self {
        // Log-spaced radii; far enough out that bounded-offset effects
        // (component means, data terms) have decayed.
        let radii = (0..16)
            .map(|i| 8.0 * (128.0_f64 / 8.0).powf(i as f64 / 15.0))
            .collect();
        Self { radii }
    }
}

/// Axis-aligned and diagonal unit directions used by the probe checks.
fn probe_directions(dim: usize) -> Vec<Vec<f64>> {
    match dim {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            vec![
                vec![1.0, 0.0],
                vec![-1.0, 0.0],
                vec![0.0, 1.0],
                vec![0.0, -1.0],
                vec![s, s],
                vec![s, -s],
                vec![-s, s],
                vec![-s, -s],
            ]
        }
        _ => vec![],
    }
}

const SANDWICH_LIMIT: f64 = 1e6;
const SLOPE_BAND: f64 = 0.2;
const GROWTH_TREND_LIMIT: f64 = 0.25;

/// Checks the polynomial-growth sandwich for `V` against its declared
/// exponent: the log-log slope over the probes must lie within ±0.2 of
/// `p` and the smallest admissible sandwich constant must stay below
/// 10^6.
pub fn check_growth(potential: &Potential, probes: &GrowthProbes) -> Result<GrowthReport> {
    let dim = potential.dim();
    let dirs = probe_directions(dim);
    if dirs.is_empty() {
        return Err(CoreError::UnsupportedDimension {
            op: "check_growth",
            max: 2,
            got: dim,
        });
    }
    if probes.radii.len() < 2 {
        return Err(CoreError::InvalidArgument(
            "growth check needs at least two radii".into(),
        ));
    }
    let p = potential.declared_p();

    let mut log_r = Vec::new();
    let mut log_v = Vec::new();
    let mut c_needed = 1.0_f64;
    let mut worst = Witness {
        label: "sandwich constant".into(),
        location: vec![0.0; dim],
        value: 1.0,
    };
    for &r in &probes.radii {
        if !(r > 0.0) {
            return Err(CoreError::InvalidArgument(format!(
                "growth radii must be positive, got {r}"
            )));
        }
        for u in &dirs {
            let x: Vec<f64> = u.iter().map(|&ui| ui * r).collect();
            let v = potential.eval(&x);
            if !v.is_finite() {
                return Err(CoreError::PotentialOverflow { radius: r, value: v });
            }
            if v > 0.0 {
                log_r.push(r.ln());
                log_v.push(v.ln());
            }
            let rp = r.powf(p);
            // Upper bound V <= C (r^p + 1).
            let mut here = v / (rp + 1.0);
            // Lower bound (r^p - 1)/C <= V; only binding when r^p > 1.
            if rp > 1.0 {
                let need = if v > 0.0 { (rp - 1.0) / v } else { f64::INFINITY };
                here = here.max(need);
            }
            if here > c_needed {
                c_needed = here;
                worst = Witness {
                    label: "sandwich constant".into(),
                    location: x.clone(),
                    value: here,
                };
            }
        }
    }

    let fitted_slope = if log_r.len() >= 2 {
        linear_fit(&log_r, &log_v).0
    } else {
        // The potential vanished on the whole probe set (e.g. the zero
        // family); there is no scale to fit, so report the declared value.
        p
    };
    let slope_ok = (fitted_slope - p).abs() <= SLOPE_BAND;
    let c_ok = c_needed <= SANDWICH_LIMIT;

    let witnesses = vec![
        worst,
        Witness {
            label: "log-log slope".into(),
            location: Vec::new(),
            value: fitted_slope,
        },
    ];
    let report = AssumptionReport {
        name: format!("growth[{}]", potential.family()),
        passed: slope_ok && c_ok,
        witnesses,
        grid: format!(
            "{} directions x {} radii in [{:.3}, {:.3}]",
            dirs.len(),
            probes.radii.len(),
            probes.radii.first().unwrap(),
            probes.radii.last().unwrap()
        ),
        notes: format!(
            "declared p = {p}; fitted slope = {fitted_slope:.4} (band ±{SLOPE_BAND}); \
             sandwich C = {c_needed:.4e} (limit {SANDWICH_LIMIT:.0e})"
        ),
    };
    Ok(GrowthReport {
        report,
        fitted_slope,
        sandwich_c: c_needed,
    })
}

/// Probe layout for [`check_condition_b3`].
#[derive(Clone, Debug)]
pub struct B3Probes {
    /// Radii of the outer variable `x` (probed in both directions).
    pub radii: Vec<f64>,
    /// Half-width of the `y` window around each probe, in bandwidths.
    pub window_bandwidths: f64,
    /// Number of `y` samples per window.
    pub window_points: usize,
}

impl Default for B3Probes {
    fn default() -> Self {
        Self {
            radii: (0..16)
                .map(|i| 1.0 * (24.0_f64).powf(i as f64 / 15.0))
                .collect(),
            window_bandwidths: 8.0,
            window_points: 1601,
        }
    }
}

/// Result of the kernel-potential boundedness check.
#[derive(Clone, Debug)]
pub struct B3Report {
    pub report: AssumptionReport,
    /// Largest bounded-Lipschitz estimate observed over all probes.
    pub sup_estimate: f64,
    /// Per-radius maxima of the estimate, aligned with the probe radii.
    pub radius_profile: Vec<f64>,
}

/// Checks boundedness of the two interaction terms that control the
/// weighted-norm evolution:
///
/// * `y -> grad V(x) . grad K(x-y) / (1 + V(y))`
/// * `y -> (grad V(x) . grad V(y)) K(x-y) / (1 + V(y))`
///
/// For each probe `x` the bounded-Lipschitz size of the function of `y`
/// is estimated as `sup |f| + max |f(y+dy)-f(y)|/dy` on a window around
/// `x`. The check passes when the estimates stay finite and show no
/// growth trend over the outer half of the radii (log-log slope of the
/// per-radius maxima at most 0.25 there).
pub fn check_condition_b3(
    potential: &Potential,
    kernel: &Kernel,
    probes: &B3Probes,
) -> Result<B3Report> {
    if potential.dim() != 1 {
        return Err(CoreError::UnsupportedDimension {
            op: "check_condition_b3",
            max: 1,
            got: potential.dim(),
        });
    }
    if probes.radii.len() < 4 || probes.window_points < 3 {
        return Err(CoreError::InvalidArgument(
            "boundedness check needs >= 4 radii and >= 3 window points".into(),
        ));
    }
    let half = probes.window_bandwidths * kernel.bandwidth();
    let n = probes.window_points;
    let dy = 2.0 * half / (n - 1) as f64;

    let mut radius_profile = Vec::with_capacity(probes.radii.len());
    let mut sup_estimate = 0.0_f64;
    let mut best = Witness {
        label: String::new(),
        location: vec![0.0, 0.0],
        value: 0.0,
    };
    for &r in &probes.radii {
        let mut m_r = 0.0_f64;
        for sign in [1.0, -1.0] {
            let x = sign * r;
            let gx = potential.grad(&[x])[0];
            // Sample both bracketed functions over the window.
            let mut f1 = Vec::with_capacity(n);
            let mut f2 = Vec::with_capacity(n);
            for j in 0..n {
                let y = x - half + j as f64 * dy;
                let w = 1.0 + potential.eval(&[y]);
                let z = [x - y];
                f1.push(gx * kernel.grad(&z)[0] / w);
                f2.push(gx * potential.grad(&[y])[0] * kernel.eval(&z) / w);
            }
            for (label, f) in [("grad-term", &f1), ("kernel-term", &f2)] {
                let sup = f.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
                let lip = f
                    .windows(2)
                    .map(|w| (w[1] - w[0]).abs() / dy)
                    .fold(0.0_f64, f64::max);
                let est = sup + lip;
                if !est.is_finite() {
                    return Err(CoreError::InvalidArgument(format!(
                        "boundedness estimate not finite at x = {x}"
                    )));
                }
                m_r = m_r.max(est);
                if est > sup_estimate {
                    sup_estimate = est;
                    // Witness at the argmax sample of |f|.
                    let (jmax, _) = f
                        .iter()
                        .enumerate()
                        .fold((0, 0.0_f64), |(bj, bv), (j, &v)| {
                            if v.abs() > bv {
                                (j, v.abs())
                            } else {
                                (bj, bv)
                            }
                        });
                    best = Witness {
                        label: format!("{label} sup+Lip"),
                        location: vec![x, x - half + jmax as f64 * dy],
                        value: est,
                    };
                }
            }
        }
        radius_profile.push(m_r);
    }

    let mid = probes.radii.len() / 2;
    let inner_max = radius_profile[..mid].iter().cloned().fold(0.0, f64::max);
    let outer_max = radius_profile[mid..].iter().cloned().fold(0.0, f64::max);
    // Growth trend over the outer half: log-log slope of the per-radius
    // maxima. Bounded interactions saturate (slope -> 0) or decay; an
    // unbounded pair grows polynomially (slope >= 1).
    let mut log_r = Vec::new();
    let mut log_m = Vec::new();
    for (&r, &m) in probes.radii[mid..].iter().zip(&radius_profile[mid..]) {
        if m > 1e-12 {
            log_r.push(r.ln());
            log_m.push(m.ln());
        }
    }
    let outer_slope = if log_r.len() >= 2 {
        linear_fit(&log_r, &log_m).0
    } else {
        0.0
    };
    let trend_ok = outer_slope <= GROWTH_TREND_LIMIT;
    let passed = trend_ok && sup_estimate.is_finite();

    let report = AssumptionReport {
        name: format!(
            "interaction-boundedness[{},{}]",
            potential.family(),
            kernel.family()
        ),
        passed,
        witnesses: vec![
            best,
            Witness {
                label: "outer-half maximum".into(),
                location: vec![*probes.radii.last().unwrap()],
                value: outer_max,
            },
            Witness {
                label: "inner-half maximum".into(),
                location: vec![probes.radii[0]],
                value: inner_max,
            },
        ],
        grid: format!(
            "{} radii in [{:.3}, {:.3}]; window ±{:.1} bandwidths, {} points",
            probes.radii.len(),
            probes.radii.first().unwrap(),
            probes.radii.last().unwrap(),
            probes.window_bandwidths,
            n
        ),
        notes: format!(
            "sup estimate = {sup_estimate:.4e}; outer/inner max = {:.4e}/{:.4e}; \
             outer-half slope = {outer_slope:.4} (limit {GROWTH_TREND_LIMIT})",
            outer_max, inner_max
        ),
    };
    Ok(B3Report {
        report,
        sup_estimate,
        radius_profile,
    })
}

/// Result of the DFT positive-definiteness check.
#[derive(Clone, Debug)]
pub struct PdReport {
    pub report: AssumptionReport,
    pub min_re: f64,
    pub max_re: f64,
    pub max_abs_im: f64,
}

/// Checks positive definiteness of a one-dimensional kernel by sampling
/// it on a symmetric periodic grid of `n` points (power of two, >= 256)
/// with half-width `halfwidth` and inspecting its discrete Fourier
/// transform: all real parts must be >= -1e-8 times the maximum and the
/// imaginary parts must vanish at the same relative scale.
pub fn check_positive_definite(kernel: &Kernel, n: usize, halfwidth: f64) -> Result<PdReport> {
    if n < 256 || !n.is_power_of_two() {
        return Err(CoreError::InvalidArgument(format!(
            "spectrum check needs a power-of-two sample count >= 256, got {n}"
        )));
    }
    if !(halfwidth > 0.0) {
        return Err(CoreError::InvalidArgument(format!(
            "spectrum half-width must be positive, got {halfwidth}"
        )));
    }
    let dx = 2.0 * halfwidth / n as f64;
    // Signed sample coordinates in DFT order: 0, dx, ..., then the
    // negative half; this keeps the sampled sequence exactly symmetric.
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|j| {
            let xi = if j <= n / 2 {
                j as f64 * dx
            } else {
                (j as f64 - n as f64) * dx
            };
            Complex::new(kernel.eval(&[xi]), 0.0)
        })
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);

    let mut min_re = f64::INFINITY;
    let mut max_re = f64::NEG_INFINITY;
    let mut max_abs_im = 0.0_f64;
    let mut argmin = 0;
    for (k, c) in buf.iter().enumerate() {
        if c.re < min_re {
            min_re = c.re;
            argmin = k;
        }
        max_re = max_re.max(c.re);
        max_abs_im = max_abs_im.max(c.im.abs());
    }
    let passed = min_re >= -1e-8 * max_re && max_abs_im <= 1e-8 * max_re;
    let report = AssumptionReport {
        name: format!("positive-definite[{}]", kernel.family()),
        passed,
        witnesses: vec![
            Witness {
                label: "min spectral value".into(),
                location: vec![argmin as f64],
                value: min_re,
            },
            Witness {
                label: "max spectral value".into(),
                location: Vec::new(),
                value: max_re,
            },
        ],
        grid: format!("{n} samples on [-{halfwidth}, {halfwidth}]"),
        notes: format!(
            "min Re = {min_re:.6e}, max Re = {max_re:.6e}, max |Im| = {max_abs_im:.3e}"
        ),
    };
    Ok(PdReport {
        report,
        min_re,
        max_re,
        max_abs_im,
    })
}

/// Convenience wrapper: dot product of a Hessian row-major matrix with a
/// vector, used by tests and the field bounds.
pub fn hess_apply(hess: &[f64], v: &[f64]) -> Vec<f64> {
    let d = v.len();
    debug_assert_eq!(hess.len(), d * d);
    (0..d).map(|i| dot(&hess[i * d..(i + 1) * d], v)).collect()
}
