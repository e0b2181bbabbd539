//! Measure-level objects: particle ensembles, signed discrete measures,
//! one-dimensional grid densities, and normalised target densities
//! `exp(-V)/Z` with their quadrature discretisations.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::models::Potential;
use crate::numerics::{kahan_sum, norm, sup_dist, KahanSum};
use crate::{CoreError, Result};

/// Atoms closer than this (sup-norm) are merged during canonicalisation.
pub const MERGE_TOL: f64 = 1e-12;

/// Axis-aligned box, the domain of a target density and its quadratures.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl DomainBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(CoreError::InvalidArgument(
                "box bounds must be non-empty and of equal dimension".into(),
            ));
        }
        for (l, h) in lo.iter().zip(&hi) {
            if !(l < h) || !l.is_finite() || !h.is_finite() {
                return Err(CoreError::InvalidArgument(format!(
                    "box bounds must satisfy lo < hi and be finite, got [{l}, {h}]"
                )));
            }
        }
        Ok(Self { lo, hi })
    }

    /// Symmetric interval `[-r, r]` in one dimension.
    pub fn symmetric_1d(r: f64) -> Result<Self> {
        Self::new(vec![-r], vec![r])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).collect()
    }

    /// The box scaled by `factor` about its centre.
    pub fn scaled(&self, factor: f64) -> Self {
        let lo = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| 0.5 * (l + h) - 0.5 * factor * (h - l))
            .collect();
        let hi = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| 0.5 * (l + h) + 0.5 * factor * (h - l))
            .collect();
        Self { lo, hi }
    }
}

/// `N` particles in `R^d`, stored flat (`positions[i*d..(i+1)*d]`).
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleEnsemble {
    dim: usize,
    positions: Vec<f64>,
}

impl ParticleEnsemble {
    pub fn new(dim: usize, positions: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(CoreError::InvalidArgument("dimension must be >= 1".into()));
        }
        if positions.is_empty() || positions.len() % dim != 0 {
            return Err(CoreError::InvalidArgument(format!(
                "positions length {} is not a positive multiple of dim {dim}",
                positions.len()
            )));
        }
        if positions.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::InvalidArgument(
                "particle positions must be finite".into(),
            ));
        }
        Ok(Self { dim, positions })
    }

    /// Convenience constructor for one-dimensional ensembles.
    pub fn from_1d(points: Vec<f64>) -> Result<Self> {
        Self::new(1, points)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    #[inline]
    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn positions_flat(&self) -> &[f64] {
        &self.positions
    }

    pub fn positions_flat_mut(&mut self) -> &mut [f64] {
        &mut self.positions
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.positions.chunks_exact(self.dim)
    }

    /// The empirical measure with uniform weights `1/N`.
    pub fn to_measure(&self) -> SignedDiscreteMeasure {
        let w = 1.0 / self.len() as f64;
        SignedDiscreteMeasure::from_parts(
            self.dim,
            self.positions.clone(),
            vec![w; self.len()],
        )
        .expect("ensemble positions are already validated")
    }

    /// Mean of `|x|^p` over the ensemble.
    pub fn radial_moment(&self, p: f64) -> f64 {
        kahan_sum(self.iter().map(|x| norm(x).powf(p))) / self.len() as f64
    }
}

/// A signed measure with finitely many atoms, kept in canonical form:
/// atoms sorted lexicographically, near-duplicates (within [`MERGE_TOL`])
/// merged, and zero weights dropped.
#[derive(Clone, Debug, PartialEq)]
pub struct SignedDiscreteMeasure {
    dim: usize,
    positions: Vec<f64>,
    weights: Vec<f64>,
}

impl SignedDiscreteMeasure {
    pub fn from_parts(dim: usize, positions: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(CoreError::InvalidArgument("dimension must be >= 1".into()));
        }
        if positions.len() != weights.len() * dim {
            return Err(CoreError::InvalidArgument(format!(
                "got {} coordinates for {} weights in dimension {dim}",
                positions.len(),
                weights.len()
            )));
        }
        if positions.iter().any(|v| !v.is_finite()) || weights.iter().any(|w| !w.is_finite()) {
            return Err(CoreError::InvalidArgument(
                "atom positions and weights must be finite".into(),
            ));
        }
        let mut m = Self {
            dim,
            positions,
            weights,
        };
        m.canonicalize();
        Ok(m)
    }

    /// The zero measure in dimension `dim`.
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            positions: Vec::new(),
            weights: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_atoms(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    #[inline]
    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Atom positions of a one-dimensional measure, sorted ascending by
    /// canonicalization. Panics if the measure is not one-dimensional.
    pub fn positions_1d(&self) -> &[f64] {
        assert_eq!(self.dim, 1, "positions_1d requires a 1-d measure");
        &self.positions
    }

    pub fn atoms(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.positions
            .chunks_exact(self.dim)
            .zip(self.weights.iter().copied())
    }

    /// Signed total mass.
    pub fn total_mass(&self) -> f64 {
        kahan_sum(self.weights.iter().copied())
    }

    /// Total variation mass `sum |w_i|`.
    pub fn total_variation(&self) -> f64 {
        kahan_sum(self.weights.iter().map(|w| w.abs()))
    }

    /// The measure scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for w in &mut out.weights {
            *w *= factor;
        }
        out.canonicalize();
        out
    }

    /// Sum of two signed measures (atoms pooled, then canonicalised).
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(CoreError::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        let mut positions = self.positions.clone();
        positions.extend_from_slice(&other.positions);
        let mut weights = self.weights.clone();
        weights.extend_from_slice(&other.weights);
        Self::from_parts(self.dim, positions, weights)
    }

    /// Sort atoms lexicographically, merge near-duplicates, drop zeros.
    fn canonicalize(&mut self) {
        let d = self.dim;
        let n = self.weights.len();
        let mut order: Vec<usize> = (0..n).collect();
        let pos = &self.positions;
        order.sort_by(|&a, &b| {
            for k in 0..d {
                match pos[a * d + k].total_cmp(&pos[b * d + k]) {
                    std::cmp::Ordering::Equal => continue,
                    other => return other,
                }
            }
            std::cmp::Ordering::Equal
        });

        let mut new_pos: Vec<f64> = Vec::with_capacity(self.positions.len());
        let mut new_w: Vec<f64> = Vec::with_capacity(n);
        let mut merged = vec![false; n];
        for (rank, &i) in order.iter().enumerate() {
            if merged[i] {
                continue;
            }
            let anchor = &pos[i * d..(i + 1) * d];
            let mut w = KahanSum::new();
            w.add(self.weights[i]);
            // Later atoms can only merge while their first coordinate is
            // within tolerance of the anchor's.
            for &j in &order[rank + 1..] {
                let cand = &pos[j * d..(j + 1) * d];
                if cand[0] - anchor[0] > MERGE_TOL {
                    break;
                }
                if !merged[j] && sup_dist(anchor, cand) <= MERGE_TOL {
                    merged[j] = true;
                    w.add(self.weights[j]);
                }
            }
            merged[i] = true;
            if w.value() != 0.0 {
                new_pos.extend_from_slice(anchor);
                new_w.push(w.value());
            }
        }
        self.positions = new_pos;
        self.weights = new_w;
    }

    /// Writes the measure as CSV: one atom per row, `x_1,...,x_d,weight`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for k in 1..=self.dim {
            let _ = write!(out, "x_{k},");
        }
        out.push_str("weight\n");
        for (x, w) in self.atoms() {
            for xi in x {
                let _ = write!(out, "{xi},");
            }
            let _ = writeln!(out, "{w}");
        }
        out
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_csv_string(&text)
    }

    pub fn from_csv_string(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| CoreError::Parse("empty measure CSV".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.last() != Some(&"weight") || cols.len() < 2 {
            return Err(CoreError::Parse(format!(
                "unexpected measure CSV header: {header}"
            )));
        }
        let dim = cols.len() - 1;
        let mut positions = Vec::new();
        let mut weights = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dim + 1 {
                return Err(CoreError::Parse(format!(
                    "row {} has {} fields, expected {}",
                    lineno + 2,
                    fields.len(),
                    dim + 1
                )));
            }
            for f in &fields[..dim] {
                positions.push(parse_f64(f)?);
            }
            weights.push(parse_f64(fields[dim])?);
        }
        Self::from_parts(dim, positions, weights)
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| CoreError::Parse(format!("bad float {s:?}: {e}")))
}

/// Difference `a - b` of two signed measures, canonicalised. Atoms of the
/// two arguments that coincide (within [`MERGE_TOL`]) cancel exactly.
pub fn subtract(a: &SignedDiscreteMeasure, b: &SignedDiscreteMeasure) -> Result<SignedDiscreteMeasure> {
    a.add(&b.scaled(-1.0))
}

/// `p`-th absolute moment `sum_i |w_i| |x_i|^p` of a signed measure.
pub fn moment(mu: &SignedDiscreteMeasure, p: f64) -> f64 {
    kahan_sum(mu.atoms().map(|(x, w)| w.abs() * norm(x).powf(p)))
}

/// Result of a normalisation-constant computation.
#[derive(Clone, Copy, Debug)]
pub struct ZResult {
    pub z: f64,
    /// Per-axis node count of the accepted grid.
    pub resolution: usize,
    /// Relative change at the accepted refinement step.
    pub rel_change: f64,
    pub refinements: usize,
}

const Z_REL_TOL: f64 = 1e-6;

/// Computes `Z = integral of exp(-V)` over the box by trapezoid
/// quadrature with grid-doubling until the relative change drops below
/// `1e-6`. Supports dimensions one and two.
pub fn compute_z(potential: &Potential, domain: &DomainBox, min_resolution: usize) -> Result<ZResult> {
    let dim = potential.dim();
    if domain.dim() != dim {
        return Err(CoreError::DimensionMismatch {
            expected: dim,
            got: domain.dim(),
        });
    }
    if dim > 2 {
        return Err(CoreError::UnsupportedDimension {
            op: "compute_z",
            max: 2,
            got: dim,
        });
    }
    let mut res = min_resolution.max(64);
    let max_res: usize = if dim == 1 { 1 << 22 } else { 1 << 13 };
    let mut prev = trapezoid_exp_neg_v(potential, domain, res)?;
    let mut refinements = 0;
    loop {
        let next_res = res * 2;
        if next_res > max_res {
            return Err(CoreError::NormalisationDiverged {
                rel_change: f64::NAN,
                refinements,
            });
        }
        let cur = trapezoid_exp_neg_v(potential, domain, next_res)?;
        refinements += 1;
        let rel = (cur - prev).abs() / cur.abs().max(f64::MIN_POSITIVE);
        if rel < Z_REL_TOL {
            return Ok(ZResult {
                z: cur,
                resolution: next_res,
                rel_change: rel,
                refinements,
            });
        }
        prev = cur;
        res = next_res;
    }
}

/// Trapezoid quadrature of `exp(-V)` on a tensor grid with `res`
/// intervals per axis.
fn trapezoid_exp_neg_v(potential: &Potential, domain: &DomainBox, res: usize) -> Result<f64> {
    let dim = domain.dim();
    let mut acc = KahanSum::new();
    match dim {
        1 => {
            let (l, r) = (domain.lo[0], domain.hi[0]);
            let dx = (r - l) / res as f64;
            for i in 0..=res {
                let x = l + i as f64 * dx;
                let v = potential.eval(&[x]);
                if !v.is_finite() {
                    return Err(CoreError::PotentialOverflow {
                        radius: x.abs(),
                        value: v,
                    });
                }
                let w = if i == 0 || i == res { 0.5 } else { 1.0 };
                acc.add(w * (-v).exp());
            }
            Ok(acc.value() * dx)
        }
        2 => {
            let dx = (domain.hi[0] - domain.lo[0]) / res as f64;
            let dy = (domain.hi[1] - domain.lo[1]) / res as f64;
            for i in 0..=res {
                let x = domain.lo[0] + i as f64 * dx;
                let wx = if i == 0 || i == res { 0.5 } else { 1.0 };
                for j in 0..=res {
                    let y = domain.lo[1] + j as f64 * dy;
                    let wy = if j == 0 || j == res { 0.5 } else { 1.0 };
                    let v = potential.eval(&[x, y]);
                    if !v.is_finite() {
                        return Err(CoreError::PotentialOverflow {
                            radius: (x * x + y * y).sqrt(),
                            value: v,
                        });
                    }
                    acc.add(wx * wy * (-v).exp());
                }
            }
            Ok(acc.value() * dx * dy)
        }
        _ => unreachable!("dimension checked by caller"),
    }
}

/// A normalised target `rho_inf = exp(-V)/Z` on a domain box.
#[derive(Clone, Debug)]
pub struct TargetDensity {
    potential: Potential,
    domain: DomainBox,
    z: ZResult,
}

impl TargetDensity {
    /// Builds the target, computing `Z` to relative tolerance `1e-6`.
    /// For coercive families (declared growth exponent > 0) the box must
    /// hold all but an estimated `1e-8` of the mass.
    pub fn new(potential: Potential, domain: DomainBox, min_resolution: usize) -> Result<Self> {
        let z = compute_z(&potential, &domain, min_resolution)?;
        let target = Self {
            potential,
            domain,
            z,
        };
        if target.potential.declared_p() > 0.0 {
            let tail = target.tail_mass_estimate()?;
            if tail >= 1e-8 {
                return Err(CoreError::InvalidArgument(format!(
                    "domain box too small for {}: estimated tail mass {tail:.3e} >= 1e-8",
                    target.potential.family()
                )));
            }
        }
        Ok(target)
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    pub fn z(&self) -> f64 {
        self.z.z
    }

    pub fn z_result(&self) -> &ZResult {
        &self.z
    }

    /// `rho_inf(x) = exp(-V(x)) / Z`.
    pub fn density(&self, x: &[f64]) -> f64 {
        (-self.potential.eval(x)).exp() / self.z.z
    }

    /// Analytic gradient `grad rho_inf = -grad V * rho_inf`; by
    /// construction the stationarity identity
    /// `grad rho_inf + rho_inf grad V = 0` holds pointwise.
    pub fn grad_density(&self, x: &[f64]) -> Vec<f64> {
        let rho = self.density(x);
        self.potential.grad(x).iter().map(|&g| -g * rho).collect()
    }

    /// Estimated fraction of mass outside the domain box, from comparing
    /// the normalisation on the box with the one on a 1.5x enlargement.
    pub fn tail_mass_estimate(&self) -> Result<f64> {
        let big = self.domain.scaled(1.5);
        let z_big = compute_z(&self.potential, &big, self.z.resolution.min(1 << 12))?;
        Ok(((z_big.z - self.z.z) / z_big.z).max(0.0))
    }

    /// Quadrature discretisation of the target: atoms at the nodes of a
    /// uniform grid with weights `w_i = exp(-V(x_i)) dx / Z`. In two
    /// dimensions `n_atoms` counts nodes per axis.
    pub fn quadrature_measure(&self, n_atoms: usize) -> Result<SignedDiscreteMeasure> {
        if n_atoms < 2 {
            return Err(CoreError::InvalidArgument(
                "quadrature needs at least two atoms per axis".into(),
            ));
        }
        match self.domain.dim() {
            1 => {
                let (l, r) = (self.domain.lo[0], self.domain.hi[0]);
                let dx = (r - l) / (n_atoms - 1) as f64;
                let mut positions = Vec::with_capacity(n_atoms);
                let mut weights = Vec::with_capacity(n_atoms);
                for i in 0..n_atoms {
                    let x = l + i as f64 * dx;
                    positions.push(x);
                    weights.push(self.density(&[x]) * dx);
                }
                SignedDiscreteMeasure::from_parts(1, positions, weights)
            }
            2 => {
                let nx = n_atoms;
                let dx = (self.domain.hi[0] - self.domain.lo[0]) / (nx - 1) as f64;
                let dy = (self.domain.hi[1] - self.domain.lo[1]) / (nx - 1) as f64;
                let mut positions = Vec::with_capacity(nx * nx * 2);
                let mut weights = Vec::with_capacity(nx * nx);
                for i in 0..nx {
                    let x = self.domain.lo[0] + i as f64 * dx;
                    for j in 0..nx {
                        let y = self.domain.lo[1] + j as f64 * dy;
                        positions.push(x);
                        positions.push(y);
                        weights.push(self.density(&[x, y]) * dx * dy);
                    }
                }
                SignedDiscreteMeasure::from_parts(2, positions, weights)
            }
            d => Err(CoreError::UnsupportedDimension {
                op: "quadrature_measure",
                max: 2,
                got: d,
            }),
        }
    }

    /// Draws `n` i.i.d. samples from the (one-dimensional) target by
    /// inverting the piecewise-linear CDF of a fine grid discretisation.
    pub fn sample_1d<R: Rng>(&self, n: usize, rng: &mut R) -> Result<ParticleEnsemble> {
        if self.domain.dim() != 1 {
            return Err(CoreError::UnsupportedDimension {
                op: "sample_1d",
                max: 1,
                got: self.domain.dim(),
            });
        }
        let cells = 1 << 14;
        let (l, r) = (self.domain.lo[0], self.domain.hi[0]);
        let dx = (r - l) / cells as f64;
        // Cumulative mass at cell right edges.
        let mut cum = Vec::with_capacity(cells);
        let mut acc = KahanSum::new();
        for i in 0..cells {
            let x = l + (i as f64 + 0.5) * dx;
            acc.add(self.density(&[x]) * dx);
            cum.push(acc.value());
        }
        let total = *cum.last().unwrap();
        let mut points = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.gen::<f64>() * total;
            let idx = cum.partition_point(|&c| c < u);
            let idx = idx.min(cells - 1);
            let c_left = if idx == 0 { 0.0 } else { cum[idx - 1] };
            let mass = (cum[idx] - c_left).max(f64::MIN_POSITIVE);
            let frac = ((u - c_left) / mass).clamp(0.0, 1.0);
            points.push(l + (idx as f64 + frac) * dx);
        }
        ParticleEnsemble::new(1, points)
    }
}

/// Draws `n` i.i.d. centred Gaussian samples with the given per-axis
/// standard deviation (prior sampling for the Bayesian demos).
pub fn sample_gaussian<R: Rng>(dim: usize, n: usize, std: f64, rng: &mut R) -> Result<ParticleEnsemble> {
    use rand_distr::{Distribution, StandardNormal};
    let mut positions = Vec::with_capacity(n * dim);
    for _ in 0..n * dim {
        let g: f64 = StandardNormal.sample(rng);
        positions.push(std * g);
    }
    ParticleEnsemble::new(dim, positions)
}

/// A nonnegative density on a uniform one-dimensional cell grid; values
/// are cell averages, so the mass is exactly `sum(values) * dx`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridDensity1D {
    left: f64,
    right: f64,
    values: Vec<f64>,
    target_mass: f64,
}

/// Negative cell values above this magnitude are an error; smaller ones
/// are clipped to zero (and the mass renormalised).
pub const DENSITY_CLIP_TOL: f64 = 1e-12;

impl GridDensity1D {
    /// Wraps cell values, clipping round-off negativity (values in
    /// `(-1e-12, 0)`) to zero and renormalising to `target_mass`.
    pub fn new(left: f64, right: f64, values: Vec<f64>, target_mass: f64) -> Result<Self> {
        if !(left < right) {
            return Err(CoreError::InvalidArgument(format!(
                "grid needs left < right, got [{left}, {right}]"
            )));
        }
        if values.len() < 2 {
            return Err(CoreError::InvalidArgument(
                "grid needs at least two cells".into(),
            ));
        }
        let mut vals = values;
        let mut clipped = false;
        for (i, v) in vals.iter_mut().enumerate() {
            if !v.is_finite() {
                return Err(CoreError::InvalidArgument(format!(
                    "non-finite density value at cell {i}"
                )));
            }
            if *v < 0.0 {
                if *v < -DENSITY_CLIP_TOL {
                    return Err(CoreError::NegativeDensity {
                        cell: i,
                        value: *v,
                        tol: DENSITY_CLIP_TOL,
                    });
                }
                *v = 0.0;
                clipped = true;
            }
        }
        let mut g = Self {
            left,
            right,
            values: vals,
            target_mass,
        };
        let mass = g.mass();
        if clipped && mass > 0.0 {
            let f = target_mass / mass;
            for v in &mut g.values {
                *v *= f;
            }
        } else if (mass - target_mass).abs() > 1e-8 * target_mass.abs().max(1.0) {
            return Err(CoreError::InvalidArgument(format!(
                "grid mass {mass:.12} differs from target mass {target_mass:.12}"
            )));
        }
        Ok(g)
    }

    /// Samples a density function at cell centres and adopts the
    /// resulting mass as the target mass.
    pub fn from_fn(left: f64, right: f64, n_cells: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let dx = (right - left) / n_cells as f64;
        let values: Vec<f64> = (0..n_cells)
            .map(|i| f(left + (i as f64 + 0.5) * dx))
            .collect();
        let mass = kahan_sum(values.iter().copied()) * dx;
        Self::new(left, right, values, mass)
    }

    pub fn left(&self) -> f64 {
        self.left
    }

    pub fn right(&self) -> f64 {
        self.right
    }

    pub fn n_cells(&self) -> usize {
        self.values.len()
    }

    pub fn dx(&self) -> f64 {
        (self.right - self.left) / self.values.len() as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn target_mass(&self) -> f64 {
        self.target_mass
    }

    pub fn center(&self, i: usize) -> f64 {
        self.left + (i as f64 + 0.5) * self.dx()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_cells()).map(|i| self.center(i)).collect()
    }

    pub fn mass(&self) -> f64 {
        kahan_sum(self.values.iter().copied()) * self.dx()
    }

    /// Checks that this grid and `other` share geometry.
    pub fn same_grid(&self, other: &Self) -> Result<()> {
        if self.left != other.left || self.right != other.right || self.n_cells() != other.n_cells()
        {
            return Err(CoreError::GridMismatch(format!(
                "[{}, {}] x {} vs [{}, {}] x {}",
                self.left,
                self.right,
                self.n_cells(),
                other.left,
                other.right,
                other.n_cells()
            )));
        }
        Ok(())
    }

    /// CSV serialisation: a comment header with the grid geometry, then
    /// one `index,value` row per cell.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# left={} right={} n_cells={} target_mass={}",
            self.left,
            self.right,
            self.n_cells(),
            self.target_mass
        );
        out.push_str("index,value\n");
        for (i, v) in self.values.iter().enumerate() {
            let _ = writeln!(out, "{i},{v}");
        }
        out
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_csv_string(&text)
    }

    pub fn from_csv_string(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let meta = lines
            .next()
            .ok_or_else(|| CoreError::Parse("empty grid CSV".into()))?;
        let mut left = None;
        let mut right = None;
        let mut n_cells = None;
        let mut target_mass = None;
        for token in meta.trim_start_matches('#').split_whitespace() {
            if let Some((k, v)) = token.split_once('=') {
                match k {
                    "left" => left = Some(parse_f64(v)?),
                    "right" => right = Some(parse_f64(v)?),
                    "n_cells" => {
                        n_cells = Some(v.parse::<usize>().map_err(|e| {
                            CoreError::Parse(format!("bad n_cells {v:?}: {e}"))
                        })?)
                    }
                    "target_mass" => target_mass = Some(parse_f64(v)?),
                    _ => {}
                }
            }
        }
        let (left, right, n_cells, target_mass) = match (left, right, n_cells, target_mass) {
            (Some(l), Some(r), Some(n), Some(m)) => (l, r, n, m),
            _ => {
                return Err(CoreError::Parse(format!(
                    "grid CSV header missing fields: {meta}"
                )))
            }
        };
        let header = lines
            .next()
            .ok_or_else(|| CoreError::Parse("grid CSV missing column header".into()))?;
        if header != "index,value" {
            return Err(CoreError::Parse(format!(
                "unexpected grid CSV column header: {header}"
            )));
        }
        let mut values = vec![0.0; n_cells];
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let (i, v) = line
                .split_once(',')
                .ok_or_else(|| CoreError::Parse(format!("bad grid row: {line}")))?;
            let idx: usize = i
                .parse()
                .map_err(|e| CoreError::Parse(format!("bad index {i:?}: {e}")))?;
            if idx >= n_cells {
                return Err(CoreError::Parse(format!("index {idx} out of range")));
            }
            values[idx] = parse_f64(v)?;
        }
        Self::new(left, right, values, target_mass)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Potential;

    fn gaussian_target() -> TargetDensity {
        TargetDensity::new(
            Potential::quadratic(1),
            DomainBox::symmetric_1d(12.0).unwrap(),
            64,
        )
        .unwrap()
    }

    #[test]
    fn z_matches_gaussian_closed_form() {
        let t = gaussian_target();
        let expect = (2.0 * std::f64::consts::PI).sqrt();
        assert!(
            (t.z() - expect).abs() / expect < 1e-6,
            "Z = {} vs sqrt(2 pi) = {expect}",
            t.z()
        );
    }

    #[test]
    fn z_of_zero_potential_is_box_volume() {
        let z = compute_z(
            &Potential::zero(1),
            &DomainBox::new(vec![0.0], vec![1.0]).unwrap(),
            64,
        )
        .unwrap();
        assert!((z.z - 1.0).abs() < 1e-12);
    }

    #[test]
    fn z_matches_two_dimensional_gaussian() {
        let z = compute_z(
            &Potential::quadratic(2),
            &DomainBox::new(vec![-10.0, -10.0], vec![10.0, 10.0]).unwrap(),
            64,
        )
        .unwrap();
        let expect = 2.0 * std::f64::consts::PI;
        assert!((z.z - expect).abs() / expect < 1e-6, "Z = {}", z.z);
    }

    #[test]
    fn quadrature_mass_is_one_and_improves_on_refinement() {
        let t = gaussian_target();
        let q1 = t.quadrature_measure(513).unwrap();
        let q2 = t.quadrature_measure(1025).unwrap();
        let e1 = (q1.total_mass() - 1.0).abs();
        let e2 = (q2.total_mass() - 1.0).abs();
        assert!(e1 < 1e-6, "coarse mass error {e1}");
        assert!(e2 <= e1 + 1e-12, "refinement did not improve: {e1} -> {e2}");
    }

    #[test]
    fn stationarity_identity_holds_on_grid() {
        let t = gaussian_target();
        let q = t.quadrature_measure(257).unwrap();
        let max_rho = q
            .atoms()
            .map(|(x, _)| t.density(x))
            .fold(0.0_f64, f64::max);
        for (x, _) in q.atoms() {
            let g = t.grad_density(x);
            let resid = (g[0] + t.density(x) * t.potential().grad(x)[0]).abs();
            assert!(resid <= 1e-10 * max_rho, "residual {resid} at {x:?}");
        }
        // Non-vacuous cross-check: the analytic gradient matches a
        // centred difference of the density itself.
        for &x in &[-1.3_f64, 0.2, 2.4] {
            let h = 1e-6;
            let fd = (t.density(&[x + h]) - t.density(&[x - h])) / (2.0 * h);
            let g = t.grad_density(&[x])[0];
            assert!((fd - g).abs() < 1e-6, "fd {fd} vs analytic {g} at {x}");
        }
    }

    #[test]
    fn second_moment_of_gaussian_quadrature_is_one() {
        let t = gaussian_target();
        let q = t.quadrature_measure(2001).unwrap();
        let m2 = moment(&q, 2.0);
        assert!((m2 - 1.0).abs() < 1e-4, "second moment {m2}");
    }

    #[test]
    fn subtract_of_ensemble_and_point_mass() {
        let ens = ParticleEnsemble::from_1d(vec![0.0, 1.0]).unwrap();
        let delta0 = SignedDiscreteMeasure::from_parts(1, vec![0.0], vec![1.0]).unwrap();
        let diff = subtract(&ens.to_measure(), &delta0).unwrap();
        assert_eq!(diff.n_atoms(), 2);
        assert_eq!(diff.position(0), &[0.0]);
        assert!((diff.weight(0) + 0.5).abs() < 1e-15);
        assert_eq!(diff.position(1), &[1.0]);
        assert!((diff.weight(1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn subtracting_a_measure_from_itself_is_empty() {
        let m = SignedDiscreteMeasure::from_parts(
            2,
            vec![0.0, 1.0, -2.0, 0.5, 3.0, 3.0],
            vec![0.25, -1.5, 2.0],
        )
        .unwrap();
        let d = subtract(&m, &m).unwrap();
        assert!(d.is_empty());
    }

    #[test]
    fn canonicalisation_merges_near_duplicates() {
        let m = SignedDiscreteMeasure::from_parts(
            1,
            vec![1.0, 1.0 + 0.4e-12, 0.0],
            vec![0.5, 0.25, 1.0],
        )
        .unwrap();
        assert_eq!(m.n_atoms(), 2);
        assert_eq!(m.position(0), &[0.0]);
        assert!((m.weight(1) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let m = SignedDiscreteMeasure::from_parts(
            2,
            vec![0.1, -0.7, 1.0 / 3.0, 2.0f64.sqrt(), -5.5, 1e-13],
            vec![0.25, -1.0 / 7.0, 1e-300],
        )
        .unwrap();
        let text = m.to_csv_string();
        let back = SignedDiscreteMeasure::from_csv_string(&text).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn grid_density_mass_and_round_trip() {
        let g = GridDensity1D::from_fn(-12.0, 12.0, 512, |x| (-0.5 * x * x).exp()).unwrap();
        let mass = g.mass();
        assert!((mass - g.target_mass()).abs() <= 1e-8 * mass);
        let text = g.to_csv_string();
        let back = GridDensity1D::from_csv_string(&text).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn grid_density_rejects_large_negativity_and_clips_roundoff() {
        let bad = GridDensity1D::new(0.0, 1.0, vec![0.5, -1e-6], 0.25);
        assert!(matches!(bad, Err(CoreError::NegativeDensity { .. })));

        let ok = GridDensity1D::new(0.0, 1.0, vec![0.5, -0.5e-12], 0.25).unwrap();
        assert!(ok.values()[1] == 0.0);
        assert!((ok.mass() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn sampling_is_seeded_and_deterministic() {
        use rand::SeedableRng;
        let t = gaussian_target();
        let mut rng1 = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut rng2 = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let a = t.sample_1d(256, &mut rng1).unwrap();
        let b = t.sample_1d(256, &mut rng2).unwrap();
        assert_eq!(a, b);
        // Loose sanity on the first two moments.
        let mean: f64 = a.positions_flat().iter().sum::<f64>() / 256.0;
        assert!(mean.abs() < 0.3, "sample mean {mean}");
        let m2 = a.radial_moment(2.0);
        assert!((m2 - 1.0).abs() < 0.4, "sample second moment {m2}");
    }

    #[test]
    fn tail_estimate_flags_small_boxes() {
        let err = TargetDensity::new(
            Potential::smoothed_abs(1, 0.5).unwrap(),
            DomainBox::symmetric_1d(12.0).unwrap(),
            64,
        );
        assert!(err.is_err(), "12 is too small for exponential tails");
        let ok = TargetDensity::new(
            Potential::smoothed_abs(1, 0.5).unwrap(),
            DomainBox::symmetric_1d(28.0).unwrap(),
            64,
        );
        assert!(ok.is_ok());
    }
}
