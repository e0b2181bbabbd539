//! Small numerical building blocks shared across modules: compensated
//! summation, quadrature weights, least-squares slope fits, and dense
//! vector helpers for the low-dimensional state vectors used throughout.

/// Compensated (Kahan) accumulator.
///
/// Summation order is part of the crate's determinism contract, so the
/// accumulator is always driven by an explicit loop over a fixed index
/// order; parallel callers give each output its own accumulator.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, value: f64) {
        let y = value - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Compensated sum of an iterator in its iteration order.
pub fn kahan_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = KahanSum::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// Trapezoid rule on uniformly spaced samples.
pub fn trapezoid(values: &[f64], dx: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mut acc = KahanSum::new();
    acc.add(0.5 * values[0]);
    for &v in &values[1..values.len() - 1] {
        acc.add(v);
    }
    acc.add(0.5 * values[values.len() - 1]);
    acc.value() * dx
}

/// Midpoint (equal-weight) rule on cell-centred samples.
pub fn midpoint(values: &[f64], dx: f64) -> f64 {
    kahan_sum(values.iter().copied()) * dx
}

/// Ordinary least-squares slope and intercept of `y` against `x`.
///
/// Used for the log-log order fits in the refinement studies and the
/// growth-exponent checks. Returns `(slope, intercept)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    assert_eq!(x.len(), y.len());
    assert!(x.len() >= 2, "need at least two points for a fit");
    let n = x.len() as f64;
    let mx = kahan_sum(x.iter().copied()) / n;
    let my = kahan_sum(y.iter().copied()) / n;
    let sxx = kahan_sum(x.iter().map(|&v| (v - mx) * (v - mx)));
    let sxy = kahan_sum(x.iter().zip(y).map(|(&u, &v)| (u - mx) * (v - my)));
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Euclidean dot product of two equal-length slices.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&u, &v)| u * v).sum()
}

/// Squared Euclidean norm.
#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// Euclidean norm.
#[inline]
pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

/// Sup-norm distance between two points.
#[inline]
pub fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&u, &v)| (u - v).abs())
        .fold(0.0, f64::max)
}

/// `out = a - b` componentwise into a fresh vector.
#[inline]
pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(&u, &v)| u - v).collect()
}

/// Second-order first derivative on a uniform grid: central differences
/// in the interior, three-point one-sided stencils at the ends.
pub fn central_difference(values: &[f64], dx: f64) -> Vec<f64> {
    let n = values.len();
    assert!(n >= 2, "need at least two samples to differentiate");
    let mut out = vec![0.0; n];
    if n == 2 {
        let d = (values[1] - values[0]) / dx;
        out[0] = d;
        out[1] = d;
        return out;
    }
    out[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * dx);
    for i in 1..n - 1 {
        out[i] = (values[i + 1] - values[i - 1]) / (2.0 * dx);
    }
    out[n - 1] = (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * dx);
    out
}
