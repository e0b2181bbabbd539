//! Interacting-particle dynamics: the kernelized gradient-flow velocity
//! field, explicit time integrators with full trajectory records, flow
//! maps along time-indexed background measures, and sup-norm bounds on
//! the induced vector field.

use std::fmt;
use std::io::Write as IoWrite;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::measures::{ParticleEnsemble, SignedDiscreteMeasure};
use crate::models::{Kernel, Potential};
use crate::numerics::KahanSum;
use crate::{CoreError, Result};

/// Positions beyond this magnitude stop an integration with a partial
/// record.
pub const BLOW_UP_GUARD: f64 = 1e6;

/// Explicit one-step methods for the particle system.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimeIntegrator {
    Euler,
    Rk4,
}

impl fmt::Display for TimeIntegrator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeIntegrator::Euler => write!(f, "euler"),
            TimeIntegrator::Rk4 => write!(f, "rk4"),
        }
    }
}

impl FromStr for TimeIntegrator {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(TimeIntegrator::Euler),
            "rk4" => Ok(TimeIntegrator::Rk4),
            other => Err(CoreError::InvalidArgument(format!(
                "unknown integrator '{other}' (expected 'euler' or 'rk4')"
            ))),
        }
    }
}

fn check_dims(dim: usize, potential: &Potential) -> Result<()> {
    if potential.dim() != dim {
        return Err(CoreError::DimensionMismatch {
            expected: dim,
            got: potential.dim(),
        });
    }
    Ok(())
}

/// Velocity induced at `query` by a weighted atomic measure:
///
/// `v(q) = - sum_j w_j [ grad K(q - x_j) + K(q - x_j) grad V(x_j) ]`.
///
/// Atoms are visited in storage order with compensated summation per
/// component, so the result is independent of thread count.
pub fn velocity_from_measure(
    mu: &SignedDiscreteMeasure,
    potential: &Potential,
    kernel: &Kernel,
    query: &[f64],
) -> Result<Vec<f64>> {
    check_dims(mu.dim(), potential)?;
    if query.len() != mu.dim() {
        return Err(CoreError::DimensionMismatch {
            expected: mu.dim(),
            got: query.len(),
        });
    }
    let d = mu.dim();
    let mut acc: Vec<KahanSum> = (0..d).map(|_| KahanSum::new()).collect();
    let mut z = vec![0.0; d];
    for (x, w) in mu.atoms() {
        for k in 0..d {
            z[k] = query[k] - x[k];
        }
        let kv = kernel.eval(&z);
        let kg = kernel.grad(&z);
        let vg = potential.grad(x);
        for k in 0..d {
            acc[k].add(w * (kg[k] + kv * vg[k]));
        }
    }
    Ok(acc.iter().map(|a| -a.value()).collect())
}

/// The particle-system velocity at a query point: the measure formula
/// with uniform weights `1/N` over the ensemble.
pub fn svgd_velocity(
    ensemble: &ParticleEnsemble,
    potential: &Potential,
    kernel: &Kernel,
    query: &[f64],
) -> Result<Vec<f64>> {
    check_dims(ensemble.dim(), potential)?;
    if query.len() != ensemble.dim() {
        return Err(CoreError::DimensionMismatch {
            expected: ensemble.dim(),
            got: query.len(),
        });
    }
    Ok(velocity_at(
        ensemble.dim(),
        ensemble.positions_flat(),
        potential,
        kernel,
        query,
    ))
}

fn velocity_at(
    dim: usize,
    positions: &[f64],
    potential: &Potential,
    kernel: &Kernel,
    query: &[f64],
) -> Vec<f64> {
    let n = positions.len() / dim;
    let w = 1.0 / n as f64;
    let mut acc: Vec<KahanSum> = (0..dim).map(|_| KahanSum::new()).collect();
    let mut z = vec![0.0; dim];
    for x in positions.chunks_exact(dim) {
        for k in 0..dim {
            z[k] = query[k] - x[k];
        }
        let kv = kernel.eval(&z);
        let kg = kernel.grad(&z);
        let vg = potential.grad(x);
        for k in 0..dim {
            acc[k].add(kg[k] + kv * vg[k]);
        }
    }
    acc.iter().map(|a| -w * a.value()).collect()
}

/// Velocities at every particle of the ensemble, flattened `N x d`.
/// Targets are distributed over threads; each target's inner sum runs
/// in fixed order, so the output is byte-identical for any thread
/// count.
pub fn svgd_velocities(
    ensemble: &ParticleEnsemble,
    potential: &Potential,
    kernel: &Kernel,
) -> Result<Vec<f64>> {
    check_dims(ensemble.dim(), potential)?;
    Ok(velocities_flat(
        ensemble.dim(),
        ensemble.positions_flat(),
        potential,
        kernel,
    ))
}

fn velocities_flat(
    dim: usize,
    positions: &[f64],
    potential: &Potential,
    kernel: &Kernel,
) -> Vec<f64> {
    let n = positions.len() / dim;
    let per_target: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let q = &positions[i * dim..(i + 1) * dim];
            velocity_at(dim, positions, potential, kernel, q)
        })
        .collect();
    let mut out = Vec::with_capacity(n * dim);
    for v in per_target {
        out.extend_from_slice(&v);
    }
    out
}

/// One explicit Euler step `x_i <- x_i + eps v(x_i)` with all particles
/// advanced simultaneously.
pub fn euler_step(
    ensemble: &ParticleEnsemble,
    potential: &Potential,
    kernel: &Kernel,
    eps: f64,
) -> Result<ParticleEnsemble> {
    if !eps.is_finite() {
        return Err(CoreError::InvalidArgument(format!(
            "step size must be finite, got {eps}"
        )));
    }
    let v = svgd_velocities(ensemble, potential, kernel)?;
    let positions: Vec<f64> = ensemble
        .positions_flat()
        .iter()
        .zip(&v)
        .map(|(&x, &vi)| x + eps * vi)
        .collect();
    ParticleEnsemble::new(ensemble.dim(), positions)
}

/// A fully recorded integration: positions and velocities at the start
/// and after every accepted step. When the blow-up guard triggers, the
/// record stops at the last finite state and `blow_up` reports when and
/// how far the system had escaped.
#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    pub dim: usize,
    pub n_particles: usize,
    pub times: Vec<f64>,
    /// One flat `N x d` position vector per recorded time.
    pub positions: Vec<Vec<f64>>,
    /// Velocities evaluated at the recorded positions.
    pub velocities: Vec<Vec<f64>>,
    pub method: TimeIntegrator,
    pub dt: f64,
    pub blow_up: Option<BlowUp>,
}

#[derive(Clone, Copy, Debug)]
pub struct BlowUp {
    pub time: f64,
    pub max_abs: f64,
}

impl TrajectoryRecord {
    pub fn n_snapshots(&self) -> usize {
        self.times.len()
    }

    pub fn ensemble_at(&self, idx: usize) -> ParticleEnsemble {
        ParticleEnsemble::new(self.dim, self.positions[idx].clone())
            .expect("recorded positions are finite")
    }

    pub fn final_ensemble(&self) -> ParticleEnsemble {
        self.ensemble_at(self.times.len() - 1)
    }

    /// Keeps every `stride`-th snapshot plus the final one.
    pub fn downsampled(&self, stride: usize) -> TrajectoryRecord {
        let stride = stride.max(1);
        let last = self.times.len() - 1;
        let mut keep: Vec<usize> = (0..self.times.len()).step_by(stride).collect();
        if *keep.last().unwrap() != last {
            keep.push(last);
        }
        TrajectoryRecord {
            dim: self.dim,
            n_particles: self.n_particles,
            times: keep.iter().map(|&i| self.times[i]).collect(),
            positions: keep.iter().map(|&i| self.positions[i].clone()).collect(),
            velocities: keep.iter().map(|&i| self.velocities[i].clone()).collect(),
            method: self.method,
            dt: self.dt,
            blow_up: self.blow_up,
        }
    }

    /// CSV rows `t,particle,x_1[,x_2]`, one per particle per snapshot.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("t,particle");
        for k in 0..self.dim {
            out.push_str(&format!(",x_{}", k + 1));
        }
        out.push('\n');
        for (s, t) in self.times.iter().enumerate() {
            for i in 0..self.n_particles {
                out.push_str(&format!("{t},{i}"));
                for k in 0..self.dim {
                    out.push_str(&format!(",{}", self.positions[s][i * self.dim + k]));
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv_string().as_bytes())?;
        Ok(())
    }

    /// Parses the CSV layout written by [`Self::to_csv_string`].
    /// Velocities are not persisted, so they come back empty and the
    /// method/step metadata take placeholder values.
    pub fn from_csv_string(text: &str) -> Result<TrajectoryRecord> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| CoreError::Parse("empty trajectory CSV".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 3 || cols[0] != "t" || cols[1] != "particle" {
            return Err(CoreError::Parse(format!(
                "unexpected trajectory header '{header}'"
            )));
        }
        let dim = cols.len() - 2;
        let mut times: Vec<f64> = Vec::new();
        let mut positions: Vec<Vec<f64>> = Vec::new();
        for (ln, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols.len() {
                return Err(CoreError::Parse(format!(
                    "row {} has {} fields, expected {}",
                    ln + 2,
                    fields.len(),
                    cols.len()
                )));
            }
            let t: f64 = fields[0]
                .parse()
                .map_err(|e| CoreError::Parse(format!("bad time on row {}: {e}", ln + 2)))?;
            let idx: usize = fields[1]
                .parse()
                .map_err(|e| CoreError::Parse(format!("bad particle on row {}: {e}", ln + 2)))?;
            if times.last() != Some(&t) && (times.is_empty() || idx == 0) {
                times.push(t);
                positions.push(Vec::new());
            }
            let snap = positions.last_mut().unwrap();
            if idx * dim != snap.len() {
                return Err(CoreError::Parse(format!(
                    "out-of-order particle index on row {}",
                    ln + 2
                )));
            }
            for f in &fields[2..] {
                let x: f64 = f
                    .parse()
                    .map_err(|e| CoreError::Parse(format!("bad position on row {}: {e}", ln + 2)))?;
                snap.push(x);
            }
        }
        if positions.is_empty() {
            return Err(CoreError::Parse("trajectory CSV has no rows".into()));
        }
        let n_particles = positions[0].len() / dim;
        if positions.iter().any(|p| p.len() != n_particles * dim) {
            return Err(CoreError::Parse(
                "snapshots have inconsistent particle counts".into(),
            ));
        }
        Ok(TrajectoryRecord {
            dim,
            n_particles,
            times,
            positions,
            velocities: Vec::new(),
            method: TimeIntegrator::Euler,
            dt: 0.0,
            blow_up: None,
        })
    }

    pub fn read_csv(path: &Path) -> Result<TrajectoryRecord> {
        let text = std::fs::read_to_string(path)?;
        Self::from_csv_string(&text)
    }
}

/// Integrates the particle system from `t0` to `t1` with fixed step
/// `dt` (the final step is shortened to land on `t1` exactly),
/// recording every step. Positions exceeding [`BLOW_UP_GUARD`] stop the
/// run with a partial record; non-finite velocities are an error.
pub fn integrate(
    ensemble: &ParticleEnsemble,
    potential: &Potential,
    kernel: &Kernel,
    t0: f64,
    t1: f64,
    dt: f64,
    method: TimeIntegrator,
) -> Result<TrajectoryRecord> {
    check_dims(ensemble.dim(), potential)?;
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(CoreError::InvalidArgument(format!(
            "time step must be positive and finite, got {dt}"
        )));
    }
    if !(t1 >= t0) || !t0.is_finite() || !t1.is_finite() {
        return Err(CoreError::InvalidArgument(format!(
            "need finite t1 >= t0, got [{t0}, {t1}]"
        )));
    }
    let dim = ensemble.dim();
    let n = ensemble.len();
    let mut state = ensemble.positions_flat().to_vec();
    let mut t = t0;
    let mut record = TrajectoryRecord {
        dim,
        n_particles: n,
        times: vec![t0],
        positions: vec![state.clone()],
        velocities: vec![velocities_flat(dim, &state, potential, kernel)],
        method,
        dt,
        blow_up: None,
    };
    let total = t1 - t0;
    let n_steps = (total / dt).ceil() as usize;
    for step in 0..n_steps {
        let h = if step + 1 == n_steps {
            t1 - t
        } else {
            dt
        };
        if h <= 0.0 {
            break;
        }
        let next = advance(dim, &state, potential, kernel, h, method);
        let t_next = if step + 1 == n_steps { t1 } else { t + h };
        check_finite(&next, dim, t_next)?;
        let max_abs = next.iter().fold(0.0_f64, |m, &x| m.max(x.abs()));
        if max_abs > BLOW_UP_GUARD {
            record.blow_up = Some(BlowUp {
                time: t_next,
                max_abs,
            });
            return Ok(record);
        }
        state = next;
        t = t_next;
        record.times.push(t);
        record.positions.push(state.clone());
        record
            .velocities
            .push(velocities_flat(dim, &state, potential, kernel));
    }
    Ok(record)
}

fn advance(
    dim: usize,
    state: &[f64],
    potential: &Potential,
    kernel: &Kernel,
    h: f64,
    method: TimeIntegrator,
) -> Vec<f64> {
    match method {
        TimeIntegrator::Euler => {
            let v = velocities_flat(dim, state, potential, kernel);
            state.iter().zip(&v).map(|(&x, &vi)| x + h * vi).collect()
        }
        TimeIntegrator::Rk4 => {
            let k1 = velocities_flat(dim, state, potential, kernel);
            let s2: Vec<f64> = state
                .iter()
                .zip(&k1)
                .map(|(&x, &k)| x + 0.5 * h * k)
                .collect();
            let k2 = velocities_flat(dim, &s2, potential, kernel);
            let s3: Vec<f64> = state
                .iter()
                .zip(&k2)
                .map(|(&x, &k)| x + 0.5 * h * k)
                .collect();
            let k3 = velocities_flat(dim, &s3, potential, kernel);
            let s4: Vec<f64> = state.iter().zip(&k3).map(|(&x, &k)| x + h * k).collect();
            let k4 = velocities_flat(dim, &s4, potential, kernel);
            (0..state.len())
                .map(|i| state[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                .collect()
        }
    }
}

fn check_finite(state: &[f64], dim: usize, time: f64) -> Result<()> {
    if let Some(pos) = state.iter().position(|x| !x.is_finite()) {
        return Err(CoreError::NonFiniteVelocity {
            particle: pos / dim,
            time,
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------
// Time-indexed background measures and flow maps.
// ---------------------------------------------------------------------

/// How a [`MeasurePath`] fills in between its snapshots.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PathInterpolation {
    /// The measure at the latest snapshot time `<= s` (the default).
    PiecewiseConstant,
    /// Cubic Hermite interpolation of each particle track using the
    /// recorded velocities; only available for paths built from a
    /// trajectory record.
    ParticleHermite,
}

/// A time-indexed family of background measures `mu_s`, given by
/// snapshots at increasing times.
#[derive(Clone, Debug)]
pub struct MeasurePath {
    times: Vec<f64>,
    measures: Vec<SignedDiscreteMeasure>,
    /// Particle tracks (positions and velocities per snapshot) when the
    /// path came from a trajectory; enables Hermite interpolation.
    tracks: Option<(usize, Vec<Vec<f64>>, Vec<Vec<f64>>)>,
    interpolation: PathInterpolation,
}

impl MeasurePath {
    /// A path that holds each snapshot measure until the next time.
    pub fn piecewise_constant(
        times: Vec<f64>,
        measures: Vec<SignedDiscreteMeasure>,
    ) -> Result<Self> {
        if times.is_empty() || times.len() != measures.len() {
            return Err(CoreError::InvalidArgument(
                "need equally many snapshot times and measures, at least one".into(),
            ));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CoreError::InvalidArgument(
                "snapshot times must be strictly increasing".into(),
            ));
        }
        let dim = measures[0].dim();
        if measures.iter().any(|m| m.dim() != dim) {
            return Err(CoreError::InvalidArgument(
                "snapshot measures must share a dimension".into(),
            ));
        }
        Ok(Self {
            times,
            measures,
            tracks: None,
            interpolation: PathInterpolation::PiecewiseConstant,
        })
    }

    /// Builds a path from an integration record, with a choice of
    /// interpolation between the recorded snapshots.
    pub fn from_trajectory(
        record: &TrajectoryRecord,
        interpolation: PathInterpolation,
    ) -> Result<Self> {
        if record.times.is_empty() {
            return Err(CoreError::InvalidArgument("empty trajectory".into()));
        }
        if interpolation == PathInterpolation::ParticleHermite
            && record.velocities.len() != record.times.len()
        {
            return Err(CoreError::InvalidArgument(
                "Hermite interpolation needs recorded velocities".into(),
            ));
        }
        let measures = record
            .positions
            .iter()
            .map(|p| {
                ParticleEnsemble::new(record.dim, p.clone())
                    .expect("recorded positions are finite")
                    .to_measure()
            })
            .collect();
        Ok(Self {
            times: record.times.clone(),
            measures,
            tracks: Some((
                record.dim,
                record.positions.clone(),
                record.velocities.clone(),
            )),
            interpolation,
        })
    }

    pub fn dim(&self) -> usize {
        self.measures[0].dim()
    }

    pub fn time_range(&self) -> (f64, f64) {
        (self.times[0], *self.times.last().unwrap())
    }

    /// Index of the snapshot interval containing `s` (clamped).
    fn segment(&self, s: f64) -> usize {
        if s <= self.times[0] {
            return 0;
        }
        let k = self.times.partition_point(|&t| t <= s);
        (k - 1).min(self.times.len().saturating_sub(2).max(0))
    }

    /// The background measure at time `s` under the path's
    /// interpolation rule; `s` is clamped to the snapshot range.
    pub fn measure_at(&self, s: f64) -> SignedDiscreteMeasure {
        match self.interpolation {
            PathInterpolation::PiecewiseConstant => {
                let k = if s <= self.times[0] {
                    0
                } else {
                    self.times.partition_point(|&t| t <= s) - 1
                };
                self.measures[k].clone()
            }
            PathInterpolation::ParticleHermite => {
                let (dim, positions, velocities) =
                    self.tracks.as_ref().expect("checked at construction");
                if self.times.len() == 1 {
                    return self.measures[0].clone();
                }
                let k = self.segment(s);
                let (t0, t1) = (self.times[k], self.times[k + 1]);
                let h = t1 - t0;
                let u = ((s - t0) / h).clamp(0.0, 1.0);
                let (p0, p1) = (&positions[k], &positions[k + 1]);
                let (v0, v1) = (&velocities[k], &velocities[k + 1]);
                let h00 = (1.0 + 2.0 * u) * (1.0 - u) * (1.0 - u);
                let h10 = u * (1.0 - u) * (1.0 - u);
                let h01 = u * u * (3.0 - 2.0 * u);
                let h11 = u * u * (u - 1.0);
                let flat: Vec<f64> = (0..p0.len())
                    .map(|i| h00 * p0[i] + h * h10 * v0[i] + h01 * p1[i] + h * h11 * v1[i])
                    .collect();
                ParticleEnsemble::new(*dim, flat)
                    .expect("interpolated positions are finite")
                    .to_measure()
            }
        }
    }
}

/// Integrates a single point along the velocity field of a background
/// measure path: `dX/ds = v_{mu_s}(X)` with `X(t) = x`, solved with
/// fourth-order Runge-Kutta steps of size `dt` (last step shortened) up
/// to time `s >= t`.
pub fn flow_map(
    path: &MeasurePath,
    potential: &Potential,
    kernel: &Kernel,
    x: &[f64],
    t: f64,
    s: f64,
    dt: f64,
) -> Result<Vec<f64>> {
    check_dims(path.dim(), potential)?;
    if x.len() != path.dim() {
        return Err(CoreError::DimensionMismatch {
            expected: path.dim(),
            got: x.len(),
        });
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(CoreError::InvalidArgument(format!(
            "time step must be positive and finite, got {dt}"
        )));
    }
    if !(s >= t) {
        return Err(CoreError::InvalidArgument(format!(
            "flow map runs forward in time, got t = {t}, s = {s}"
        )));
    }
    let mut state = x.to_vec();
    let mut tau = t;
    let n_steps = ((s - t) / dt).ceil() as usize;
    for step in 0..n_steps {
        let h = if step + 1 == n_steps { s - tau } else { dt };
        if h <= 0.0 {
            break;
        }
        let eval = |q: &[f64], at: f64| -> Result<Vec<f64>> {
            let mu = path.measure_at(at);
            velocity_from_measure(&mu, potential, kernel, q)
        };
        let k1 = eval(&state, tau)?;
        let s2: Vec<f64> = state
            .iter()
            .zip(&k1)
            .map(|(&p, &k)| p + 0.5 * h * k)
            .collect();
        let k2 = eval(&s2, tau + 0.5 * h)?;
        let s3: Vec<f64> = state
            .iter()
            .zip(&k2)
            .map(|(&p, &k)| p + 0.5 * h * k)
            .collect();
        let k3 = eval(&s3, tau + 0.5 * h)?;
        let s4: Vec<f64> = state.iter().zip(&k3).map(|(&p, &k)| p + h * k).collect();
        let k4 = eval(&s4, tau + h)?;
        for i in 0..state.len() {
            state[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        tau = if step + 1 == n_steps { s } else { tau + h };
        if state.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFiniteVelocity {
                particle: 0,
                time: tau,
            });
        }
    }
    Ok(state)
}

/// Sup-norm bounds of the velocity field induced by a measure, probed
/// on a finite point set: the field itself, its Jacobian (Frobenius
/// norm), and its alignment with the potential gradient.
#[derive(Clone, Copy, Debug)]
pub struct FieldBounds {
    /// `sup_q |v(q)|`.
    pub sup_velocity: f64,
    /// `sup_q |Dv(q)|_F`.
    pub sup_velocity_grad: f64,
    /// `sup_q |grad V(q) . v(q)|`.
    pub sup_drift_alignment: f64,
}

pub fn vector_field_bounds(
    mu: &SignedDiscreteMeasure,
    potential: &Potential,
    kernel: &Kernel,
    probes: &ParticleEnsemble,
) -> Result<FieldBounds> {
    check_dims(mu.dim(), potential)?;
    if probes.dim() != mu.dim() {
        return Err(CoreError::DimensionMismatch {
            expected: mu.dim(),
            got: probes.dim(),
        });
    }
    let d = mu.dim();
    let mut sup_v = 0.0_f64;
    let mut sup_grad = 0.0_f64;
    let mut sup_align = 0.0_f64;
    let mut z = vec![0.0; d];
    for q in probes.iter() {
        let v = velocity_from_measure(mu, potential, kernel, q)?;
        let mut jac: Vec<KahanSum> = (0..d * d).map(|_| KahanSum::new()).collect();
        for (x, w) in mu.atoms() {
            for k in 0..d {
                z[k] = q[k] - x[k];
            }
            let hess = kernel.hess(&z);
            let kg = kernel.grad(&z);
            let vg = potential.grad(x);
            for r in 0..d {
                for c in 0..d {
                    jac[r * d + c].add(w * (hess[r * d + c] + kg[r] * vg[c]));
                }
            }
        }
        let grad_frob: f64 = jac
            .iter()
            .map(|a| a.value() * a.value())
            .sum::<f64>()
            .sqrt();
        let vq = potential.grad(q);
        let align: f64 = vq.iter().zip(&v).map(|(&a, &b)| a * b).sum();
        sup_v = sup_v.max(v.iter().map(|&c| c * c).sum::<f64>().sqrt());
        sup_grad = sup_grad.max(grad_frob);
        sup_align = sup_align.max(align.abs());
    }
    Ok(FieldBounds {
        sup_velocity: sup_v,
        sup_velocity_grad: sup_grad,
        sup_drift_alignment: sup_align,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad() -> Potential {
        Potential::quadratic(1)
    }

    fn gauss() -> Kernel {
        Kernel::gaussian(1.0).unwrap()
    }

    #[test]
    fn single_particle_velocity_is_minus_grad_v() {
        let ens = ParticleEnsemble::from_1d(vec![1.0]).unwrap();
        let v = svgd_velocity(&ens, &quad(), &gauss(), &[1.0]).unwrap();
        assert_eq!(v, vec![-1.0]);
    }

    #[test]
    fn euler_step_contracts_a_single_particle() {
        let ens = ParticleEnsemble::from_1d(vec![1.0]).unwrap();
        let next = euler_step(&ens, &quad(), &gauss(), 0.1).unwrap();
        assert!((next.position(0)[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn rk4_matches_the_exponential_decay() {
        let ens = ParticleEnsemble::from_1d(vec![1.0]).unwrap();
        let rec = integrate(&ens, &quad(), &gauss(), 0.0, 1.0, 0.01, TimeIntegrator::Rk4).unwrap();
        let x = rec.final_ensemble().position(0)[0];
        assert!(
            (x - (-1.0_f64).exp()).abs() < 1e-8,
            "x(1) = {x} vs e^-1"
        );
        assert_eq!(rec.n_snapshots(), 101);
        assert!((rec.times[50] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn integrator_orders_match_their_theory() {
        let exact = (-1.0_f64).exp();
        for (method, expected_order) in [(TimeIntegrator::Euler, 1.0), (TimeIntegrator::Rk4, 4.0)] {
            let dts = [0.2, 0.1, 0.05, 0.025];
            let mut logs = Vec::new();
            for &dt in &dts {
                let ens = ParticleEnsemble::from_1d(vec![1.0]).unwrap();
                let rec = integrate(&ens, &quad(), &gauss(), 0.0, 1.0, dt, method).unwrap();
                let err = (rec.final_ensemble().position(0)[0] - exact).abs();
                logs.push((dt.ln(), err.max(1e-300).ln()));
            }
            let xs: Vec<f64> = logs.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = logs.iter().map(|p| p.1).collect();
            let (slope, _) = crate::numerics::linear_fit(&xs, &ys);
            assert!(
                (slope - expected_order).abs() < 0.3,
                "{method}: fitted order {slope}"
            );
        }
    }

    #[test]
    fn mirror_symmetry_is_exact() {
        let ens = ParticleEnsemble::from_1d(vec![-0.8, 0.8]).unwrap();
        let vm = svgd_velocity(&ens, &quad(), &gauss(), &[-0.8]).unwrap();
        let vp = svgd_velocity(&ens, &quad(), &gauss(), &[0.8]).unwrap();
        assert!((vm[0] + vp[0]).abs() < 1e-15, "{} vs {}", vm[0], vp[0]);
    }

    #[test]
    fn partial_final_step_lands_exactly_on_t1() {
        let ens = ParticleEnsemble::from_1d(vec![1.0]).unwrap();
        let rec = integrate(&ens, &quad(), &gauss(), 0.0, 0.25, 0.1, TimeIntegrator::Euler).unwrap();
        assert_eq!(rec.times.len(), 4);
        assert_eq!(*rec.times.last().unwrap(), 0.25);
    }

    #[test]
    fn unstable_steps_trip_the_blow_up_guard() {
        let ens = ParticleEnsemble::from_1d(vec![1.0]).unwrap();
        let rec = integrate(&ens, &quad(), &gauss(), 0.0, 300.0, 3.0, TimeIntegrator::Euler).unwrap();
        let blow = rec.blow_up.expect("the (1 - 3)^k oscillation must escape");
        assert!(blow.max_abs > BLOW_UP_GUARD);
        assert!(rec.times.len() < 100);
        let last = rec.positions.last().unwrap()[0];
        assert!(last.abs() <= BLOW_UP_GUARD);
    }

    #[test]
    fn kernel_repulsion_pushes_particles_apart() {
        let ens = ParticleEnsemble::from_1d(vec![-0.5, 0.5]).unwrap();
        let v = svgd_velocities(&ens, &Potential::zero(1), &gauss()).unwrap();
        assert!(v[0] < 0.0 && v[1] > 0.0, "velocities {v:?}");
        assert!((v[1] - 0.5 * (-0.5_f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn trajectory_csv_round_trips() {
        let ens = ParticleEnsemble::new(1, vec![0.4, -1.3]).unwrap();
        let rec = integrate(&ens, &quad(), &gauss(), 0.0, 0.3, 0.1, TimeIntegrator::Rk4).unwrap();
        let text = rec.to_csv_string();
        let back = TrajectoryRecord::from_csv_string(&text).unwrap();
        assert_eq!(back.dim, 1);
        assert_eq!(back.n_particles, 2);
        assert_eq!(back.times, rec.times);
        assert_eq!(back.positions, rec.positions);
    }

    #[test]
    fn downsampling_keeps_ends() {
        let ens = ParticleEnsemble::from_1d(vec![1.0]).unwrap();
        let rec = integrate(&ens, &quad(), &gauss(), 0.0, 1.0, 0.1, TimeIntegrator::Euler).unwrap();
        let ds = rec.downsampled(4);
        assert_eq!(ds.times.first(), rec.times.first());
        assert_eq!(ds.times.last(), rec.times.last());
        assert!(ds.times.len() < rec.times.len());
    }

    #[test]
    fn flow_map_with_s_equal_t_is_identity() {
        let mu = ParticleEnsemble::from_1d(vec![0.0]).unwrap().to_measure();
        let path = MeasurePath::piecewise_constant(vec![0.0], vec![mu]).unwrap();
        let x = flow_map(&path, &quad(), &gauss(), &[0.7], 0.0, 0.0, 0.01).unwrap();
        assert_eq!(x, vec![0.7]);
    }

    #[test]
    fn flow_map_reproduces_particle_tracks_along_hermite_paths() {
        let ens = ParticleEnsemble::from_1d(vec![-1.0, 0.5, 1.5]).unwrap();
        let dt = 0.05;
        let rec = integrate(&ens, &quad(), &gauss(), 0.0, 1.0, dt, TimeIntegrator::Rk4).unwrap();
        let path = MeasurePath::from_trajectory(&rec, PathInterpolation::ParticleHermite).unwrap();
        for i in 0..3 {
            let start = rec.positions[0][i];
            let end = flow_map(&path, &quad(), &gauss(), &[start], 0.0, 1.0, dt).unwrap()[0];
            let truth = rec.positions.last().unwrap()[i];
            assert!(
                (end - truth).abs() < 10.0 * dt.powi(4),
                "particle {i}: {end} vs {truth}"
            );
        }
    }

    #[test]
    fn piecewise_constant_paths_freeze_the_background() {
        let ens = ParticleEnsemble::from_1d(vec![-1.0, 1.0]).unwrap();
        let rec = integrate(&ens, &quad(), &gauss(), 0.0, 1.0, 0.1, TimeIntegrator::Rk4).unwrap();
        let path = MeasurePath::from_trajectory(&rec, PathInterpolation::PiecewiseConstant).unwrap();
        // Mid-interval queries return the left snapshot.
        let mid = path.measure_at(0.05);
        let first = path.measure_at(0.0);
        assert_eq!(mid, first);
        let late = path.measure_at(10.0);
        assert_eq!(late, path.measure_at(1.0));
    }

    #[test]
    fn field_bounds_scale_linearly_in_the_measure() {
        let mu = SignedDiscreteMeasure::from_parts(1, vec![-0.4, 0.9], vec![0.6, 0.4]).unwrap();
        let probes = ParticleEnsemble::from_1d(vec![-1.0, -0.3, 0.2, 1.1]).unwrap();
        let b1 = vector_field_bounds(&mu, &quad(), &gauss(), &probes).unwrap();
        let b2 = vector_field_bounds(&mu.scaled(2.0), &quad(), &gauss(), &probes).unwrap();
        assert!((b2.sup_velocity - 2.0 * b1.sup_velocity).abs() < 1e-14 * b1.sup_velocity.max(1.0));
        assert!(
            (b2.sup_velocity_grad - 2.0 * b1.sup_velocity_grad).abs()
                < 1e-14 * b1.sup_velocity_grad.max(1.0)
        );
        assert!(
            (b2.sup_drift_alignment - 2.0 * b1.sup_drift_alignment).abs()
                < 1e-14 * b1.sup_drift_alignment.max(1.0)
        );
        assert!(b1.sup_velocity > 0.0);
    }

    #[test]
    fn two_dimensional_velocity_matches_a_hand_sum() {
        let ens = ParticleEnsemble::new(2, vec![0.0, 0.0]).unwrap();
        let pot = Potential::quadratic(2);
        let v = svgd_velocity(&ens, &pot, &gauss(), &[1.0, 0.0]).unwrap();
        // Single atom at the origin: v = -[grad K((1,0)) + K((1,0)) * 0].
        let expect = (-0.5_f64).exp();
        assert!((v[0] - expect).abs() < 1e-15, "{v:?}");
        assert!(v[1].abs() < 1e-15);
    }
}
