//! Kullback-Leibler divergence between grid densities and the kernel
//! Stein dissipation functional driving the mean-field energy decay.

use crate::meanfield1d::{kernel_convolve, ConvMethod};
use crate::measures::GridDensity1D;
use crate::models::{Kernel, Potential};
use crate::numerics::{central_difference, KahanSum};
use crate::{CoreError, Result};

pub use crate::meanfield1d::ConvMethod as DissipationMethod;

/// Densities below this are treated as zero when deciding whether the
/// divergence is infinite.
const SUPPORT_FLOOR: f64 = 1e-300;

/// `KL(rho || sigma) = sum_i rho_i ln(rho_i / sigma_i) dx` on a shared
/// grid, with `0 ln 0 = 0` and `+infinity` where `rho` carries mass but
/// `sigma` does not.
pub fn kl_divergence(rho: &GridDensity1D, sigma: &GridDensity1D) -> Result<f64> {
    rho.same_grid(sigma)?;
    let dx = rho.dx();
    let mut acc = KahanSum::new();
    for (&r, &s) in rho.values().iter().zip(sigma.values()) {
        if r <= SUPPORT_FLOOR {
            continue;
        }
        if s <= SUPPORT_FLOOR {
            return Ok(f64::INFINITY);
        }
        acc.add(r * (r / s).ln() * dx);
    }
    Ok(acc.value())
}

/// Discrete Stein dissipation of a density against a target potential:
/// with `s = rho' + rho V'` (second-order differencing for `rho'`),
///
/// `D = dx * sum_i s_i (K * s)_i`.
///
/// For a positive-definite kernel the lattice quadratic form is
/// nonnegative, so `D >= -tol * (1 + sum s_i^2 dx)` up to round-off;
/// indefinite kernels may produce genuinely negative values.
pub fn stein_dissipation(
    rho: &GridDensity1D,
    potential: &Potential,
    kernel: &Kernel,
) -> Result<f64> {
    stein_dissipation_with(rho, potential, kernel, ConvMethod::Auto)
}

pub fn stein_dissipation_with(
    rho: &GridDensity1D,
    potential: &Potential,
    kernel: &Kernel,
    method: ConvMethod,
) -> Result<f64> {
    if potential.dim() != 1 {
        return Err(CoreError::DimensionMismatch {
            expected: 1,
            got: potential.dim(),
        });
    }
    let n = rho.n_cells();
    let dx = rho.dx();
    let drho = central_difference(rho.values(), dx);
    let s: Vec<f64> = (0..n)
        .map(|i| drho[i] + rho.values()[i] * potential.grad(&[rho.center(i)])[0])
        .collect();
    let ks = kernel_convolve(kernel, &s, dx, method)?;
    let mut acc = KahanSum::new();
    for (si, ki) in s.iter().zip(&ks) {
        acc.add(si * ki * dx);
    }
    Ok(acc.value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{DomainBox, TargetDensity};
    use rustfft::num_complex::Complex;
    use rustfft::FftPlanner;

    fn gaussian_grid(mean: f64, left: f64, right: f64, n: usize) -> GridDensity1D {
        GridDensity1D::from_fn(left, right, n, |x| {
            (-0.5 * (x - mean) * (x - mean)).exp() / (2.0 * std::f64::consts::PI).sqrt()
        })
        .unwrap()
    }

    #[test]
    fn two_cell_hand_value() {
        let rho = GridDensity1D::new(0.0, 2.0, vec![0.7, 0.3], 1.0).unwrap();
        let sigma = GridDensity1D::new(0.0, 2.0, vec![0.5, 0.5], 1.0).unwrap();
        let kl = kl_divergence(&rho, &sigma).unwrap();
        // 0.7 ln 1.4 + 0.3 ln 0.6 with dx = 1.
        assert!((kl - 0.0822828785050518).abs() < 1e-12, "kl {kl}");
        assert_eq!(kl_divergence(&rho, &rho).unwrap(), 0.0);
    }

    #[test]
    fn shifted_gaussian_kl_is_half_the_squared_shift() {
        let rho = gaussian_grid(0.5, -12.0, 12.0, 4096);
        let sigma = gaussian_grid(0.0, -12.0, 12.0, 4096);
        let kl = kl_divergence(&rho, &sigma).unwrap();
        assert!((kl - 0.125).abs() < 1e-6, "kl {kl}");
    }

    #[test]
    fn zeros_follow_the_support_conventions() {
        let rho = GridDensity1D::new(0.0, 1.0, vec![0.0, 2.0], 1.0).unwrap();
        let sigma = GridDensity1D::new(0.0, 1.0, vec![1.0, 1.0], 1.0).unwrap();
        let kl = kl_divergence(&rho, &sigma).unwrap();
        assert!((kl - 2.0 * 2.0_f64.ln() * 0.5).abs() < 1e-12);
        assert_eq!(kl_divergence(&sigma, &rho).unwrap(), f64::INFINITY);
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let a = gaussian_grid(0.0, -8.0, 8.0, 128);
        let b = gaussian_grid(0.0, -8.0, 8.0, 256);
        assert!(kl_divergence(&a, &b).is_err());
    }

    #[test]
    fn dissipation_of_the_target_is_zero() {
        let target =
            TargetDensity::new(
                Potential::quadratic(1),
                DomainBox::symmetric_1d(12.0).unwrap(),
                256,
            )
                .unwrap();
        let rho = GridDensity1D::from_fn(-12.0, 12.0, 2048, |x| target.density(&[x])).unwrap();
        let kernel = Kernel::gaussian(1.0).unwrap();
        let d = stein_dissipation(&rho, target.potential(), &kernel).unwrap();
        let dx = rho.dx();
        let drho = central_difference(rho.values(), dx);
        let s_sq: f64 = (0..rho.n_cells())
            .map(|i| {
                let s = drho[i] + rho.values()[i] * rho.center(i);
                s * s * dx
            })
            .sum();
        assert!(d.abs() < 1e-8, "dissipation {d}");
        assert!(d >= -1e-10 * (1.0 + s_sq), "negative dissipation {d}");
    }

    #[test]
    fn shifted_gaussian_dissipation_hand_value() {
        // rho = N(1/2, 1) against V = x^2/2 gives s = rho/2, so
        // D = (1/4) E[exp(-(X-Y)^2/2)] = 1/(4 sqrt 3) for X, Y iid
        // standard normal.
        let rho = gaussian_grid(0.5, -11.5, 12.5, 2048);
        let pot = Potential::quadratic(1);
        let kernel = Kernel::gaussian(1.0).unwrap();
        let d = stein_dissipation(&rho, &pot, &kernel).unwrap();
        assert!(
            (d - 0.14433756729740643).abs() < 1e-4,
            "dissipation {d} vs 1/(4 sqrt 3)"
        );
    }

    #[test]
    fn direct_and_fft_dissipation_agree() {
        let rho = gaussian_grid(0.3, -10.0, 10.0, 1500);
        let pot = Potential::quadratic(1);
        let kernel = Kernel::gaussian(0.7).unwrap();
        let d = stein_dissipation_with(&rho, &pot, &kernel, ConvMethod::Direct).unwrap();
        let f = stein_dissipation_with(&rho, &pot, &kernel, ConvMethod::Fft).unwrap();
        assert!((d - f).abs() < 1e-10, "{d} vs {f}");
    }

    #[test]
    fn dissipation_matches_its_spectral_form() {
        // Zero-padded circular embedding: D = (dx^2 / M) sum_k
        // K_hat_k |s_hat_k|^2 over the length-2n wrap of the kernel.
        let rho = gaussian_grid(0.4, -9.0, 9.0, 512);
        let pot = Potential::quadratic(1);
        let kernel = Kernel::gaussian(1.0).unwrap();
        let n = rho.n_cells();
        let dx = rho.dx();
        let drho = central_difference(rho.values(), dx);
        let s: Vec<f64> = (0..n)
            .map(|i| drho[i] + rho.values()[i] * rho.center(i))
            .collect();
        let m = 2 * n;
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(m);
        let mut s_hat: Vec<Complex<f64>> = s
            .iter()
            .map(|&v| Complex::new(v, 0.0))
            .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
            .take(m)
            .collect();
        fft.process(&mut s_hat);
        let mut k_hat: Vec<Complex<f64>> = (0..m)
            .map(|t| {
                let lag = if t <= n { t as f64 } else { t as f64 - m as f64 } * dx;
                Complex::new(kernel.eval(&[lag]), 0.0)
            })
            .collect();
        fft.process(&mut k_hat);
        let spectral: f64 = (0..m)
            .map(|k| k_hat[k].re * s_hat[k].norm_sqr())
            .sum::<f64>()
            * dx
            * dx
            / m as f64;
        let direct = stein_dissipation_with(&rho, &pot, &kernel, ConvMethod::Direct).unwrap();
        assert!(
            (direct - spectral).abs() < 1e-10 * (1.0 + direct.abs()),
            "direct {direct} vs spectral {spectral}"
        );
    }
}
