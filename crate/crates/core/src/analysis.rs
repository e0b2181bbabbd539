//! Bound evaluators and fitters for the stability theory: the Riccati
//! comparison bound, backward Gronwall verification, the finite-time
//! stability certificate with its square-root horizon, the
//! double-exponential particle schedule, departure-time fits, and a
//! permutation test for monotone trends.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::numerics::{kahan_sum, KahanSum};
use crate::{CoreError, Result};

/// A norm (or any nonnegative diagnostic) sampled along a run.
#[derive(Clone, Debug)]
pub struct NormSeries {
    times: Vec<f64>,
    values: Vec<f64>,
    n_particles: usize,
    pub seed: u64,
    pub label: String,
}

impl NormSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>, n_particles: usize) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(CoreError::InvalidArgument(
                "series needs equally many times and values, at least one".into(),
            ));
        }
        if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CoreError::InvalidArgument(
                "series times must be finite and strictly increasing".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(CoreError::InvalidArgument(
                "series values must be finite and nonnegative".into(),
            ));
        }
        if n_particles == 0 {
            return Err(CoreError::InvalidArgument(
                "series needs a positive particle count".into(),
            ));
        }
        Ok(Self {
            times,
            values,
            n_particles,
            seed: 0,
            label: String::new(),
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// The series with every value multiplied by `factor >= 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if factor < 0.0 || !factor.is_finite() {
            return Err(CoreError::InvalidArgument(format!(
                "scale factor must be nonnegative and finite, got {factor}"
            )));
        }
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= factor;
        }
        Ok(out)
    }
}

/// Solution `alpha / (1 - C t alpha)` of `m' = C m^2`, `m(0) = alpha`;
/// `+infinity` signals blow-up at or before `t`.
pub fn riccati_bound(alpha: f64, c: f64, t: f64) -> Result<f64> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(CoreError::InvalidArgument(format!(
            "initial value must be nonnegative and finite, got {alpha}"
        )));
    }
    if !(c > 0.0) || !c.is_finite() {
        return Err(CoreError::InvalidArgument(format!(
            "rate constant must be positive and finite, got {c}"
        )));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(CoreError::InvalidArgument(format!(
            "time must be nonnegative and finite, got {t}"
        )));
    }
    let den = 1.0 - c * t * alpha;
    if den > 0.0 {
        Ok(alpha / den)
    } else {
        Ok(f64::INFINITY)
    }
}

/// Result of checking `f(t) <= h(t) exp(C int_t^T g)` on a sample grid.
#[derive(Clone, Debug)]
pub struct GronwallReport {
    pub passed: bool,
    /// Smallest value of `bound - f` over the grid.
    pub worst_margin: f64,
    pub worst_time: f64,
}

/// Verifies the backward Gronwall conclusion on a shared time grid:
/// `f`, `g`, `h` sampled at `times`, `h` nonincreasing (validated), the
/// tail integral of `g` by the trapezoid rule.
pub fn gronwall_backward_check(
    times: &[f64],
    f: &[f64],
    g: &[f64],
    h: &[f64],
    c: f64,
) -> Result<GronwallReport> {
    let n = times.len();
    if n < 2 || f.len() != n || g.len() != n || h.len() != n {
        return Err(CoreError::InvalidArgument(
            "need at least two samples of f, g, h on a shared grid".into(),
        ));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CoreError::InvalidArgument(
            "times must be strictly increasing".into(),
        ));
    }
    let all = f.iter().chain(g).chain(h).chain(times);
    if all.into_iter().any(|v| !v.is_finite()) {
        return Err(CoreError::InvalidArgument(
            "samples must be finite".into(),
        ));
    }
    if f.iter().chain(g).chain(h).any(|&v| v < 0.0) {
        return Err(CoreError::InvalidArgument(
            "samples must be nonnegative".into(),
        ));
    }
    if !(c >= 0.0) || !c.is_finite() {
        return Err(CoreError::InvalidArgument(format!(
            "constant must be nonnegative and finite, got {c}"
        )));
    }
    let h_scale = h.iter().fold(0.0_f64, |m, &v| m.max(v));
    for w in h.windows(2) {
        if w[1] > w[0] + 1e-12 * (1.0 + h_scale) {
            return Err(CoreError::InvalidArgument(format!(
                "h must be nonincreasing, found increase {} -> {}",
                w[0], w[1]
            )));
        }
    }
    // Tail integrals int_{t_k}^{T} g by backward trapezoid accumulation.
    let mut tail = vec![0.0; n];
    for k in (0..n - 1).rev() {
        let seg = 0.5 * (g[k] + g[k + 1]) * (times[k + 1] - times[k]);
        tail[k] = tail[k + 1] + seg;
    }
    let mut worst_margin = f64::INFINITY;
    let mut worst_time = times[0];
    for k in 0..n {
        let bound = h[k] * (c * tail[k]).exp();
        let margin = bound - f[k];
        if margin < worst_margin {
            worst_margin = margin;
            worst_time = times[k];
        }
    }
    let scale = 1.0 + h_scale + f.iter().fold(0.0_f64, |m, &v| m.max(v));
    Ok(GronwallReport {
        passed: worst_margin >= -1e-9 * scale,
        worst_margin,
        worst_time,
    })
}

/// Verdict and bound curve of the finite-time stability certificate:
/// with `m0 = values[0]`, the bound
///
/// `B(t) = C (t+1) m0 / (1 - C (t+1) t m0)`
///
/// is checked against the series wherever the denominator is at least
/// one half. The report also carries the horizon `sqrt(N / 2C) - 1`
/// and, when `m0 <= 1/N`, whether the uniform bound `sqrt(2/C) / sqrt N`
/// held up to that horizon.
#[derive(Clone, Debug)]
pub struct CertificateReport {
    pub passed: bool,
    /// `B(t_k)` where the denominator is positive.
    pub bound: Vec<Option<f64>>,
    /// Whether `t_k` lies in the denominator >= 1/2 regime.
    pub in_regime: Vec<bool>,
    pub checked: usize,
    pub first_violation: Option<usize>,
    pub horizon: f64,
    pub uniform_threshold: Option<f64>,
    pub uniform_bound_held: Option<bool>,
}

pub fn stability_certificate(series: &NormSeries, c: f64) -> Result<CertificateReport> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(CoreError::InvalidArgument(format!(
            "certificate constant must be positive and finite, got {c}"
        )));
    }
    let m0 = series.values()[0];
    if !(m0 > 0.0) {
        return Err(CoreError::InvalidArgument(format!(
            "certificate needs a positive initial value, got {m0}"
        )));
    }
    let n = series.n_particles() as f64;
    let mut bound = Vec::with_capacity(series.len());
    let mut in_regime = Vec::with_capacity(series.len());
    let mut checked = 0;
    let mut first_violation = None;
    for (k, (&t, &v)) in series.times().iter().zip(series.values()).enumerate() {
        let den = 1.0 - c * (t + 1.0) * t * m0;
        let b = if den > 0.0 {
            Some(c * (t + 1.0) * m0 / den)
        } else {
            None
        };
        let regime = den >= 0.5;
        if regime {
            checked += 1;
            let bk = b.expect("denominator >= 1/2 is positive");
            if v > bk * (1.0 + 1e-12) && first_violation.is_none() {
                first_violation = Some(k);
            }
        }
        bound.push(b);
        in_regime.push(regime);
    }
    let horizon = (n / (2.0 * c)).sqrt() - 1.0;
    let (uniform_threshold, uniform_bound_held) = if m0 <= 1.0 / n {
        let threshold = (2.0 / c).sqrt() / n.sqrt();
        let held = series
            .times()
            .iter()
            .zip(series.values())
            .filter(|(&t, _)| t <= horizon)
            .all(|(_, &v)| v <= threshold * (1.0 + 1e-12));
        (Some(threshold), Some(held))
    } else {
        (None, None)
    };
    Ok(CertificateReport {
        passed: first_violation.is_none(),
        bound,
        in_regime,
        checked,
        first_violation,
        horizon,
        uniform_threshold,
        uniform_bound_held,
    })
}

/// Smallest constant (at least 1) for which the certificate passes on
/// every pilot series; any constant below 1 fails at the initial sample
/// because `B(0) = C m0`. Errors if even `c_max` fails.
pub fn calibrate_c(pilots: &[NormSeries], c_max: f64) -> Result<f64> {
    if pilots.is_empty() {
        return Err(CoreError::InvalidArgument(
            "calibration needs at least one pilot series".into(),
        ));
    }
    let pass = |c: f64| -> Result<bool> {
        for s in pilots {
            if !stability_certificate(s, c)?.passed {
                return Ok(false);
            }
        }
        Ok(true)
    };
    if pass(1.0)? {
        return Ok(1.0);
    }
    let mut hi = 1.0;
    while !pass(hi)? {
        hi *= 2.0;
        if hi > c_max {
            return Err(CoreError::InvalidArgument(format!(
                "no constant up to {c_max} certifies the pilot runs"
            )));
        }
    }
    let mut lo = hi / 2.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if pass(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Particle count demanded by the double-exponential schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScheduleSize {
    pub n: u64,
    pub saturated: bool,
}

/// `ceil(exp(2 C e^{C t}))`, saturating at `2^63 - 1` with a flag.
pub fn double_exp_schedule(c: f64, t: f64) -> Result<ScheduleSize> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(CoreError::InvalidArgument(format!(
            "schedule constant must be positive and finite, got {c}"
        )));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(CoreError::InvalidArgument(format!(
            "schedule time must be nonnegative and finite, got {t}"
        )));
    }
    let cap = i64::MAX as u64; // 2^63 - 1
    let exponent = 2.0 * c * (c * t).exp();
    let value = exponent.exp();
    if !value.is_finite() || value >= i64::MAX as f64 {
        return Ok(ScheduleSize {
            n: cap,
            saturated: true,
        });
    }
    let n = value.ceil() as u64;
    if n >= cap {
        return Ok(ScheduleSize {
            n: cap,
            saturated: true,
        });
    }
    Ok(ScheduleSize {
        n,
        saturated: false,
    })
}

/// First time the series exceeds `factor x values[0]`, linearly
/// interpolated between samples; `None` if it never does.
pub fn fit_departure_time(series: &NormSeries, factor: f64) -> Result<Option<f64>> {
    if !(factor > 1.0) || !factor.is_finite() {
        return Err(CoreError::InvalidArgument(format!(
            "departure factor must exceed 1, got {factor}"
        )));
    }
    let target = factor * series.values()[0];
    let times = series.times();
    let values = series.values();
    for k in 0..values.len() {
        if values[k] > target {
            if k == 0 {
                return Ok(Some(times[0]));
            }
            let (t0, t1) = (times[k - 1], times[k]);
            let (v0, v1) = (values[k - 1], values[k]);
            return Ok(Some(t0 + (target - v0) * (t1 - t0) / (v1 - v0)));
        }
    }
    Ok(None)
}

/// Spearman rank correlation with a seeded permutation test.
#[derive(Clone, Copy, Debug)]
pub struct TrendReport {
    pub rho: f64,
    /// Permutation p-value against the one-sided "increasing trend"
    /// alternative.
    pub p_increasing: f64,
    pub p_two_sided: f64,
}

/// Average ranks (ties share the mean of their positions).
fn average_ranks(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = kahan_sum(a.iter().copied()) / n;
    let mb = kahan_sum(b.iter().copied()) / n;
    let mut sab = KahanSum::new();
    let mut saa = KahanSum::new();
    let mut sbb = KahanSum::new();
    for (&u, &v) in a.iter().zip(b) {
        sab.add((u - ma) * (v - mb));
        saa.add((u - ma) * (u - ma));
        sbb.add((v - mb) * (v - mb));
    }
    let den = (saa.value() * sbb.value()).sqrt();
    if den == 0.0 {
        0.0
    } else {
        sab.value() / den
    }
}

pub fn spearman_trend(
    x: &[f64],
    y: &[f64],
    n_permutations: usize,
    seed: u64,
) -> Result<TrendReport> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(CoreError::InvalidArgument(
            "trend test needs two equal-length samples of size >= 2".into(),
        ));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(CoreError::InvalidArgument(
            "trend samples must be finite".into(),
        ));
    }
    if n_permutations == 0 {
        return Err(CoreError::InvalidArgument(
            "need at least one permutation".into(),
        ));
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let rho = pearson(&rx, &ry);
    // Degenerate (constant) inputs: no evidence either way.
    if rx.iter().all(|&r| r == rx[0]) || ry.iter().all(|&r| r == ry[0]) {
        return Ok(TrendReport {
            rho: 0.0,
            p_increasing: 1.0,
            p_two_sided: 1.0,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm = ry.clone();
    let mut count_ge = 0usize;
    let mut count_abs = 0usize;
    for _ in 0..n_permutations {
        perm.shuffle(&mut rng);
        let r = pearson(&rx, &perm);
        if r >= rho - 1e-15 {
            count_ge += 1;
        }
        if r.abs() >= rho.abs() - 1e-15 {
            count_abs += 1;
        }
    }
    Ok(TrendReport {
        rho,
        p_increasing: (1 + count_ge) as f64 / (1 + n_permutations) as f64,
        p_two_sided: (1 + count_abs) as f64 / (1 + n_permutations) as f64,
    })
}
