//! Built-in interaction kernels `K(x - y)` with the derivatives needed by
//! the particle field and the cancellation identities: gradient, Hessian,
//! Laplacian, and gradient-of-Laplacian.

use crate::numerics::norm_sq;
use crate::{CoreError, Result};

/// A radially symmetric interaction kernel evaluated on differences
/// `z = x - y`.
#[derive(Clone, Debug)]
pub enum Kernel {
    /// `K(z) = exp(-|z|^2 / (2 h^2))` — smooth, strictly positive
    /// definite.
    Gaussian { bandwidth: f64 },
    /// `K(z) = (1 + |z|^2/h^2)^{-1/2}` — smooth, positive definite with
    /// heavy tails.
    InverseMultiquadric { bandwidth: f64 },
    /// `K(z) = max(0, 1 - |z|/h)` (one-dimensional) — positive definite
    /// but only Lipschitz; derivatives are defined almost everywhere.
    Triangle { bandwidth: f64 },
    /// `K(z) = 1_{|z| <= h}` (one-dimensional) — *not* positive definite;
    /// kept as the counterexample for the spectrum check.
    BoxIndicator { bandwidth: f64 },
}

impl Kernel {
    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        check_bandwidth(bandwidth)?;
        Ok(Kernel::Gaussian { bandwidth })
    }

    pub fn inverse_multiquadric(bandwidth: f64) -> Result<Self> {
        check_bandwidth(bandwidth)?;
        Ok(Kernel::InverseMultiquadric { bandwidth })
    }

    pub fn triangle(bandwidth: f64) -> Result<Self> {
        check_bandwidth(bandwidth)?;
        Ok(Kernel::Triangle { bandwidth })
    }

    pub fn box_indicator(bandwidth: f64) -> Result<Self> {
        check_bandwidth(bandwidth)?;
        Ok(Kernel::BoxIndicator { bandwidth })
    }

    pub fn bandwidth(&self) -> f64 {
        match self {
            Kernel::Gaussian { bandwidth }
            | Kernel::InverseMultiquadric { bandwidth }
            | Kernel::Triangle { bandwidth }
            | Kernel::BoxIndicator { bandwidth } => *bandwidth,
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            Kernel::Gaussian { .. } => "gaussian",
            Kernel::InverseMultiquadric { .. } => "inverse-multiquadric",
            Kernel::Triangle { .. } => "triangle",
            Kernel::BoxIndicator { .. } => "box-indicator",
        }
    }

    /// Whether the kernel has the three continuous derivatives assumed by
    /// the finite-difference consistency tests.
    pub fn is_smooth(&self) -> bool {
        matches!(
            self,
            Kernel::Gaussian { .. } | Kernel::InverseMultiquadric { .. }
        )
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        let r2 = norm_sq(z);
        match self {
            Kernel::Gaussian { bandwidth } => (-0.5 * r2 / (bandwidth * bandwidth)).exp(),
            Kernel::InverseMultiquadric { bandwidth } => {
                (1.0 + r2 / (bandwidth * bandwidth)).powf(-0.5)
            }
            Kernel::Triangle { bandwidth } => (1.0 - r2.sqrt() / bandwidth).max(0.0),
            Kernel::BoxIndicator { bandwidth } => {
                if r2.sqrt() <= *bandwidth {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn grad(&self, z: &[f64]) -> Vec<f64> {
        let r2 = norm_sq(z);
        match self {
            Kernel::Gaussian { bandwidth } => {
                let h2 = bandwidth * bandwidth;
                let k = (-0.5 * r2 / h2).exp();
                z.iter().map(|&zi| -zi / h2 * k).collect()
            }
            Kernel::InverseMultiquadric { bandwidth } => {
                let h2 = bandwidth * bandwidth;
                let u = 1.0 + r2 / h2;
                let f = -u.powf(-1.5) / h2;
                z.iter().map(|&zi| f * zi).collect()
            }
            Kernel::Triangle { bandwidth } => {
                let r = r2.sqrt();
                if r == 0.0 || r >= *bandwidth {
                    vec![0.0; z.len()]
                } else {
                    z.iter().map(|&zi| -zi / (r * bandwidth)).collect()
                }
            }
            Kernel::BoxIndicator { .. } => vec![0.0; z.len()],
        }
    }

    /// Hessian, row-major `d x d`.
    pub fn hess(&self, z: &[f64]) -> Vec<f64> {
        let d = z.len();
        let r2 = norm_sq(z);
        match self {
            Kernel::Gaussian { bandwidth } => {
                let h2 = bandwidth * bandwidth;
                let k = (-0.5 * r2 / h2).exp();
                let mut out = vec![0.0; d * d];
                for i in 0..d {
                    for j in 0..d {
                        let mut v = z[i] * z[j] / (h2 * h2);
                        if i == j {
                            v -= 1.0 / h2;
                        }
                        out[i * d + j] = v * k;
                    }
                }
                out
            }
            Kernel::InverseMultiquadric { bandwidth } => {
                let h2 = bandwidth * bandwidth;
                let u = 1.0 + r2 / h2;
                let u32 = u.powf(-1.5);
                let u52 = u.powf(-2.5);
                let mut out = vec![0.0; d * d];
                for i in 0..d {
                    for j in 0..d {
                        let mut v = 3.0 * z[i] * z[j] / (h2 * h2) * u52;
                        if i == j {
                            v -= u32 / h2;
                        }
                        out[i * d + j] = v;
                    }
                }
                out
            }
            Kernel::Triangle { .. } | Kernel::BoxIndicator { .. } => vec![0.0; d * d],
        }
    }

    pub fn laplacian(&self, z: &[f64]) -> f64 {
        let d = z.len() as f64;
        let r2 = norm_sq(z);
        match self {
            Kernel::Gaussian { bandwidth } => {
                let h2 = bandwidth * bandwidth;
                let k = (-0.5 * r2 / h2).exp();
                (r2 / (h2 * h2) - d / h2) * k
            }
            Kernel::InverseMultiquadric { bandwidth } => {
                let h2 = bandwidth * bandwidth;
                let u = 1.0 + r2 / h2;
                -d / h2 * u.powf(-1.5) + 3.0 * r2 / (h2 * h2) * u.powf(-2.5)
            }
            Kernel::Triangle { .. } | Kernel::BoxIndicator { .. } => 0.0,
        }
    }

    /// Gradient of the Laplacian (third-order derivative data).
    pub fn grad_laplacian(&self, z: &[f64]) -> Vec<f64> {
        let d = z.len() as f64;
        let r2 = norm_sq(z);
        match self {
            Kernel::Gaussian { bandwidth } => {
                let h2 = bandwidth * bandwidth;
                let k = (-0.5 * r2 / h2).exp();
                let f = (d + 2.0) / (h2 * h2) - r2 / (h2 * h2 * h2);
                z.iter().map(|&zi| f * zi * k).collect()
            }
            Kernel::InverseMultiquadric { bandwidth } => {
                let h2 = bandwidth * bandwidth;
                let u = 1.0 + r2 / h2;
                let f = 3.0 * (d + 2.0) / (h2 * h2) * u.powf(-2.5)
                    - 15.0 * r2 / (h2 * h2 * h2) * u.powf(-3.5);
                z.iter().map(|&zi| f * zi).collect()
            }
            Kernel::Triangle { .. } | Kernel::BoxIndicator { .. } => vec![0.0; z.len()],
        }
    }
}

fn check_bandwidth(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(CoreError::InvalidArgument(format!(
            "kernel bandwidth must be positive and finite, got {h}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_grad(k: &Kernel, z: &[f64], h: f64) -> Vec<f64> {
        (0..z.len())
            .map(|i| {
                let mut zp = z.to_vec();
                let mut zm = z.to_vec();
                zp[i] += h;
                zm[i] -= h;
                (k.eval(&zp) - k.eval(&zm)) / (2.0 * h)
            })
            .collect()
    }

    fn fd_grad_laplacian(k: &Kernel, z: &[f64], h: f64) -> Vec<f64> {
        (0..z.len())
            .map(|i| {
                let mut zp = z.to_vec();
                let mut zm = z.to_vec();
                zp[i] += h;
                zm[i] -= h;
                (k.laplacian(&zp) - k.laplacian(&zm)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gaussian_hand_values() {
        let k = Kernel::gaussian(1.0).unwrap();
        assert_eq!(k.eval(&[0.0]), 1.0);
        let v = k.eval(&[1.0]);
        assert!((v - (-0.5_f64).exp()).abs() < 1e-15);
        assert_eq!(k.grad(&[0.0]), vec![0.0]);
    }

    #[test]
    fn smooth_kernels_match_finite_differences() {
        let probes: Vec<Vec<f64>> = vec![
            vec![0.0],
            vec![0.7],
            vec![-2.3],
            vec![0.4, -1.2],
            vec![-0.9, 0.1],
        ];
        for kernel in [
            Kernel::gaussian(1.0).unwrap(),
            Kernel::gaussian(0.7).unwrap(),
            Kernel::inverse_multiquadric(1.0).unwrap(),
            Kernel::inverse_multiquadric(1.5).unwrap(),
        ] {
            for z in &probes {
                let g = kernel.grad(z);
                let gfd = fd_grad(&kernel, z, 1e-5);
                for (a, b) in g.iter().zip(&gfd) {
                    assert!((a - b).abs() < 1e-8, "{} grad at {z:?}", kernel.family());
                }
                // Laplacian must equal the trace of the Hessian.
                let d = z.len();
                let hess = kernel.hess(z);
                let trace: f64 = (0..d).map(|i| hess[i * d + i]).sum();
                assert!(
                    (trace - kernel.laplacian(z)).abs() < 1e-12,
                    "{} trace/laplacian at {z:?}",
                    kernel.family()
                );
                let gl = kernel.grad_laplacian(z);
                let glfd = fd_grad_laplacian(&kernel, z, 1e-5);
                for (a, b) in gl.iter().zip(&glfd) {
                    assert!(
                        (a - b).abs() < 1e-6,
                        "{} grad-laplacian at {z:?}: {a} vs {b}",
                        kernel.family()
                    );
                }
            }
        }
    }

    #[test]
    fn kernels_are_symmetric_and_peak_at_zero() {
        let probes = [0.3, 0.9, 1.7, 3.4];
        for kernel in [
            Kernel::gaussian(1.0).unwrap(),
            Kernel::inverse_multiquadric(1.0).unwrap(),
            Kernel::triangle(1.0).unwrap(),
            Kernel::box_indicator(1.0).unwrap(),
        ] {
            let k0 = kernel.eval(&[0.0]);
            for &p in &probes {
                assert_eq!(kernel.eval(&[p]), kernel.eval(&[-p]));
                assert!(kernel.eval(&[p]) <= k0);
            }
        }
    }

    #[test]
    fn triangle_has_compact_support() {
        let k = Kernel::triangle(1.0).unwrap();
        assert_eq!(k.eval(&[1.0]), 0.0);
        assert_eq!(k.eval(&[1.5]), 0.0);
        assert!((k.eval(&[0.25]) - 0.75).abs() < 1e-15);
        assert!((k.grad(&[0.25])[0] + 1.0).abs() < 1e-15);
    }
}
