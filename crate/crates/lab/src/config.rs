//! Experiment configuration: a TOML schema with defaults, validation per
//! experiment kind, and a canonical hash that identifies the experiment
//! (everything except the output location).

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::LabError;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// One of: simulate, stability-sweep, convergence-sweep, pde1d,
    /// check-assumptions, metric.  A `[bayes]` section switches the
    /// simulate kind to the posterior-sampling demo.
    pub kind: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub dynamics: DynamicsConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub convergence: ConvergenceConfig,
    #[serde(default)]
    pub pde: PdeConfig,
    #[serde(default)]
    pub bayes: Option<BayesConfig>,
    #[serde(default)]
    pub metric: Option<MetricConfig>,
}

fn default_out_dir() -> String {
    "runs".into()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// zero | quadratic | smoothed-abs | quartic.
    #[serde(default = "default_potential")]
    pub potential: String,
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Smoothing radius of the smoothed-abs family.
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// gaussian | imq | triangle | box.
    #[serde(default = "default_kernel")]
    pub kernel: String,
    #[serde(default = "default_bandwidth")]
    pub bandwidth: f64,
    /// Half-width of the symmetric quadrature/PDE domain.
    #[serde(default = "default_halfwidth")]
    pub domain_halfwidth: f64,
}

fn default_potential() -> String {
    "quadratic".into()
}
fn default_dim() -> usize {
    1
}
fn default_delta() -> f64 {
    0.5
}
fn default_kernel() -> String {
    "gaussian".into()
}
fn default_bandwidth() -> f64 {
    1.0
}
fn default_halfwidth() -> f64 {
    12.0
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            potential: default_potential(),
            dim: default_dim(),
            delta: default_delta(),
            kernel: default_kernel(),
            bandwidth: default_bandwidth(),
            domain_halfwidth: default_halfwidth(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    /// Metrics are computed every `snapshot_stride`-th step.
    #[serde(default = "default_stride")]
    pub snapshot_stride: usize,
    /// euler | rk4.
    #[serde(default = "default_integrator")]
    pub integrator: String,
    /// Particle count for single runs (sweeps use their own list).
    #[serde(default = "default_n_particles")]
    pub n_particles: usize,
    /// Standard deviation of the seeded Gaussian initialisation used by
    /// `simulate` (sweeps sample the target instead).
    #[serde(default = "default_init_std")]
    pub init_std: f64,
}

fn default_dt() -> f64 {
    0.05
}
fn default_t_max() -> f64 {
    10.0
}
fn default_stride() -> usize {
    2
}
fn default_integrator() -> String {
    "rk4".into()
}
fn default_n_particles() -> usize {
    100
}
fn default_init_std() -> f64 {
    1.0
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            dt: default_dt(),
            t_max: default_t_max(),
            snapshot_stride: default_stride(),
            integrator: default_integrator(),
            n_particles: default_n_particles(),
            init_std: default_init_std(),
        }
    }
}

/// Calibration constant for the stability certificate: a fixed value or
/// `"fit"` to take the smallest constant certifying the smallest-N runs.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Calibration {
    Fixed(f64),
    Named(String),
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration::Named("fit".into())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub n_list: Vec<usize>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Atom count of the quadrature reference measure.
    #[serde(default = "default_reference_atoms")]
    pub reference_atoms: usize,
    #[serde(default)]
    pub calibration: Calibration,
    #[serde(default = "default_departure_factor")]
    pub departure_factor: f64,
}

fn default_replicates() -> usize {
    8
}
fn default_reference_atoms() -> usize {
    2001
}
fn default_departure_factor() -> f64 {
    2.0
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n_list: Vec::new(),
            replicates: default_replicates(),
            reference_atoms: default_reference_atoms(),
            calibration: Calibration::default(),
            departure_factor: default_departure_factor(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    /// Wasserstein order to report.
    #[serde(default = "default_q")]
    pub q: f64,
    /// Explicit `[time, particles]` pairs; when empty the schedule is
    /// generated from `constant` over `t_grid`.
    #[serde(default)]
    pub pairs: Vec<(f64, u64)>,
    /// Times at which the particle-count schedule is evaluated.
    #[serde(default = "default_t_grid")]
    pub t_grid: Vec<f64>,
    /// Growth constant of the generated schedule.
    #[serde(default = "default_constant")]
    pub constant: f64,
    /// Schedule entries above this are clamped (noted per pair);
    /// saturated entries are skipped entirely.
    #[serde(default = "default_n_cap")]
    pub n_cap: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Atom count of the quadrature reference measure.
    #[serde(default = "default_reference_atoms")]
    pub reference_atoms: usize,
    /// Mean/std of the Gaussian start density.
    #[serde(default = "default_start_mean")]
    pub start_mean: f64,
    #[serde(default = "default_init_std")]
    pub start_std: f64,
}

fn default_q() -> f64 {
    1.0
}
fn default_t_grid() -> Vec<f64> {
    vec![0.0, 0.5, 1.0, 1.5]
}
fn default_constant() -> f64 {
    1.0
}
fn default_n_cap() -> u64 {
    4096
}
fn default_start_mean() -> f64 {
    1.0
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            q: default_q(),
            pairs: Vec::new(),
            t_grid: default_t_grid(),
            constant: default_constant(),
            n_cap: default_n_cap(),
            replicates: default_replicates(),
            reference_atoms: default_reference_atoms(),
            start_mean: default_start_mean(),
            start_std: default_init_std(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeConfig {
    #[serde(default = "default_n_cells")]
    pub n_cells: usize,
    #[serde(default = "default_pde_t_max")]
    pub t_max: f64,
    #[serde(default = "default_start_mean")]
    pub init_mean: f64,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
    /// Fraction of the CFL limit used as the fixed time step.
    #[serde(default = "default_cfl_fraction")]
    pub cfl_fraction: f64,
    /// Explicit time step; still checked against the CFL limit at every
    /// step.  Overrides `cfl_fraction`.
    #[serde(default)]
    pub dt: Option<f64>,
    /// Rows are written to the series file every `snapshot_stride`-th
    /// step (the divergence bookkeeping itself runs every step).
    #[serde(default = "default_pde_stride")]
    pub snapshot_stride: usize,
}

fn default_n_cells() -> usize {
    512
}
fn default_pde_t_max() -> f64 {
    5.0
}
fn default_cfl_fraction() -> f64 {
    0.9
}
fn default_pde_stride() -> usize {
    10
}

impl Default for PdeConfig {
    fn default() -> Self {
        Self {
            n_cells: default_n_cells(),
            t_max: default_pde_t_max(),
            init_mean: default_start_mean(),
            init_std: default_init_std(),
            cfl_fraction: default_cfl_fraction(),
            dt: None,
            snapshot_stride: default_pde_stride(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BayesConfig {
    /// gaussian-conjugate | logistic.
    pub model: String,
    /// CSV data file: one `y` column for the Gaussian likelihood,
    /// `label,x1[,x2]` rows for logistic regression.
    pub data_file: String,
    #[serde(default = "default_bandwidth")]
    pub prior_std: f64,
    /// Known likelihood standard deviation (Gaussian model).
    #[serde(default = "default_bandwidth")]
    pub likelihood_std: f64,
    #[serde(default = "default_bayes_particles")]
    pub n_particles: usize,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Per-axis atom count of the quadrature oracle.
    #[serde(default = "default_grid_atoms")]
    pub grid_atoms: usize,
}

fn default_bayes_particles() -> usize {
    500
}
fn default_grid_atoms() -> usize {
    201
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricConfig {
    /// w1 | w2 | bl | bl-flat.
    pub name: String,
    /// Measure CSV files to compare.
    pub left: String,
    pub right: String,
}

pub const KINDS: &[&str] = &[
    "simulate",
    "stability-sweep",
    "convergence-sweep",
    "pde1d",
    "check-assumptions",
    "metric",
];

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, LabError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| LabError::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), LabError> {
        let fail = |msg: String| Err(LabError::Config(msg));
        if !KINDS.contains(&self.kind.as_str()) {
            return fail(format!(
                "unknown experiment kind '{}' (expected one of {})",
                self.kind,
                KINDS.join(", ")
            ));
        }
        if !["zero", "quadratic", "smoothed-abs", "quartic"].contains(&self.model.potential.as_str())
        {
            return fail(format!("unknown potential '{}'", self.model.potential));
        }
        if !["gaussian", "imq", "triangle", "box"].contains(&self.model.kernel.as_str()) {
            return fail(format!("unknown kernel '{}'", self.model.kernel));
        }
        if self.model.dim == 0 || self.model.dim > 2 {
            return fail(format!("model dim must be 1 or 2, got {}", self.model.dim));
        }
        for (name, v) in [
            ("model.bandwidth", self.model.bandwidth),
            ("model.delta", self.model.delta),
            ("model.domain_halfwidth", self.model.domain_halfwidth),
            ("dynamics.dt", self.dynamics.dt),
            ("pde.cfl_fraction", self.pde.cfl_fraction),
            ("pde.init_std", self.pde.init_std),
            ("convergence.start_std", self.convergence.start_std),
            ("dynamics.init_std", self.dynamics.init_std),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return fail(format!("{name} must be positive and finite, got {v}"));
            }
        }
        for (name, v) in [
            ("dynamics.t_max", self.dynamics.t_max),
            ("pde.t_max", self.pde.t_max),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return fail(format!("{name} must be nonnegative and finite, got {v}"));
            }
        }
        if self.dynamics.snapshot_stride == 0 || self.pde.snapshot_stride == 0 {
            return fail("snapshot strides must be at least 1".into());
        }
        if !["euler", "rk4"].contains(&self.dynamics.integrator.as_str()) {
            return fail(format!(
                "unknown integrator '{}' (expected euler or rk4)",
                self.dynamics.integrator
            ));
        }
        match self.kind.as_str() {
            "stability-sweep" => {
                if self.model.dim != 1 {
                    return fail("stability-sweep needs a one-dimensional model".into());
                }
                let ns = &self.sweep.n_list;
                if ns.len() < 3 {
                    return fail("stability-sweep needs at least 3 entries in sweep.n_list".into());
                }
                if ns.iter().any(|&n| n == 0) {
                    return fail("sweep.n_list entries must be positive".into());
                }
                let (lo, hi) = (ns.iter().min().unwrap(), ns.iter().max().unwrap());
                if *hi < 8 * lo {
                    return fail(format!(
                        "sweep.n_list must span at least an 8x range, got {lo}..{hi}"
                    ));
                }
                if self.sweep.replicates == 0 {
                    return fail("sweep.replicates must be positive".into());
                }
                if self.sweep.reference_atoms < 2 {
                    return fail("sweep.reference_atoms must be at least 2".into());
                }
                if hi + self.sweep.reference_atoms > stein_core::metrics::MAX_BL_ATOMS {
                    return fail(format!(
                        "largest N plus sweep.reference_atoms must stay within the \
                         {}-atom norm solver limit",
                        stein_core::metrics::MAX_BL_ATOMS
                    ));
                }
                if !(self.sweep.departure_factor > 1.0) {
                    return fail(format!(
                        "sweep.departure_factor must exceed 1, got {}",
                        self.sweep.departure_factor
                    ));
                }
                if let Calibration::Named(name) = &self.sweep.calibration {
                    if name != "fit" {
                        return fail(format!(
                            "sweep.calibration must be a number or \"fit\", got '{name}'"
                        ));
                    }
                }
                if let Calibration::Fixed(c) = self.sweep.calibration {
                    if !(c > 0.0) || !c.is_finite() {
                        return fail(format!("sweep.calibration must be positive, got {c}"));
                    }
                }
            }
            "convergence-sweep" => {
                if self.model.dim != 1 {
                    return fail("convergence-sweep needs a one-dimensional model".into());
                }
                let conv = &self.convergence;
                if conv.pairs.is_empty() {
                    if conv.t_grid.is_empty() {
                        return fail(
                            "convergence-sweep needs explicit pairs or a nonempty t_grid".into(),
                        );
                    }
                    if conv.t_grid.windows(2).any(|w| w[1] <= w[0])
                        || conv.t_grid.iter().any(|&t| t < 0.0)
                    {
                        return fail(
                            "convergence.t_grid must be nonnegative and increasing".into(),
                        );
                    }
                    if !(conv.constant > 0.0) || !conv.constant.is_finite() {
                        return fail(format!(
                            "convergence.constant must be positive, got {}",
                            conv.constant
                        ));
                    }
                } else {
                    if conv.pairs.windows(2).any(|w| w[1].0 <= w[0].0)
                        || conv.pairs.iter().any(|&(t, n)| t < 0.0 || n == 0)
                    {
                        return fail(
                            "convergence.pairs need increasing times and positive counts".into(),
                        );
                    }
                }
                if conv.q != 1.0 {
                    return fail(format!(
                        "only q = 1 is supported against the quadrature reference, got {}",
                        conv.q
                    ));
                }
                if conv.n_cap < 2 || conv.replicates == 0 {
                    return fail("convergence.n_cap must be >= 2 and replicates positive".into());
                }
                if conv.reference_atoms < 2 {
                    return fail("convergence.reference_atoms must be at least 2".into());
                }
            }
            "pde1d" => {
                if self.model.dim != 1 {
                    return fail("pde1d needs a one-dimensional model".into());
                }
                if self.pde.n_cells < 16 {
                    return fail(format!(
                        "pde.n_cells must be at least 16, got {}",
                        self.pde.n_cells
                    ));
                }
                if self.pde.cfl_fraction > 1.0 {
                    return fail(format!(
                        "pde.cfl_fraction must not exceed 1, got {}",
                        self.pde.cfl_fraction
                    ));
                }
                if let Some(dt) = self.pde.dt {
                    if !(dt > 0.0) || !dt.is_finite() {
                        return fail(format!("pde.dt must be positive and finite, got {dt}"));
                    }
                }
            }
            "metric" => {
                let m = self.metric.as_ref().ok_or_else(|| {
                    LabError::Config("metric kind needs a [metric] section".into())
                })?;
                if !["w1", "w2", "bl", "bl-flat"].contains(&m.name.as_str()) {
                    return fail(format!("unknown metric '{}'", m.name));
                }
            }
            "simulate" => {
                if self.dynamics.n_particles == 0 {
                    return fail("dynamics.n_particles must be positive".into());
                }
                if let Some(b) = &self.bayes {
                    if !["gaussian-conjugate", "logistic"].contains(&b.model.as_str()) {
                        return fail(format!("unknown bayes model '{}'", b.model));
                    }
                    if b.n_particles == 0 || b.grid_atoms < 2 {
                        return fail(
                            "bayes.n_particles and bayes.grid_atoms must be positive".into(),
                        );
                    }
                    if !(b.prior_std > 0.0) || !(b.likelihood_std > 0.0) || !(b.dt > 0.0) {
                        return fail("bayes scales must be positive".into());
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Canonical hash of the experiment: the resolved config with the
    /// output location blanked, serialised to JSON in declaration order.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.out_dir = String::new();
        let json = serde_json::to_string(&canon).expect("config serialises");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        let digest = h.finalize();
        let mut out = String::with_capacity(64);
        for b in digest {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }

    /// Short model identifier carried in records and summaries.
    pub fn model_id(&self) -> String {
        format!(
            "{}+{}(h={})",
            self.model.potential, self.model.kernel, self.model.bandwidth
        )
    }
}
