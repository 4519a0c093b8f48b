//! Lorentzian convolution by trapezoid quadrature on a finite window.
//!
//! The mass of the unit-area kernel outside a symmetric window of half-width
//! H is `1 − (2/π) atan(2H/γ)`. It is credited with the mean of the integrand
//! at the two window edges; the reported tail error bounds what that credit
//! misses by comparing the mean edge value with the mean at twice the
//! distance.

use std::f64::consts::PI;

use crate::error::{domain, Error, Result};
use crate::model::{self, ModelParams, TuningPoint};

/// Quadrature settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureOptions {
    /// Full width of the integration window in µeV.
    pub window: f64,
    pub n_points: usize,
    /// Relative tolerance on the estimated tail error.
    pub tol: f64,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        QuadratureOptions {
            window: 8000.0,
            n_points: 800_001,
            tol: 1e-6,
        }
    }
}

/// Convolved value together with its tail-error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Convolved {
    pub value: f64,
    pub tail_error: f64,
}

/// ∫ h(s) 𝓛_γ(s) ds for a unit-area Lorentzian of FWHM γ centered at 0.
pub fn lorentzian_average<F: Fn(f64) -> f64>(h: F, gamma: f64, opts: &QuadratureOptions) -> Result<Convolved> {
    if !(gamma >= 0.0) {
        return domain(format!("kernel width must be non-negative, got {gamma}"));
    }
    if gamma == 0.0 {
        return Ok(Convolved {
            value: h(0.0),
            tail_error: 0.0,
        });
    }
    if opts.n_points < 3 || !(opts.window > 0.0) {
        return domain("quadrature needs a positive window and at least three points");
    }
    let half = opts.window / 2.0;
    let hw = gamma / 2.0;
    let n = opts.n_points - 1;
    let step = opts.window / n as f64;
    let kernel = |s: f64| hw / PI / (s * s + hw * hw);
    let mut sum = 0.0;
    for k in 0..=n {
        let s = -half + k as f64 * step;
        let w = if k == 0 || k == n { 0.5 } else { 1.0 };
        sum += w * h(s) * kernel(s);
    }
    sum *= step;
    let tail_mass = 1.0 - 2.0 / PI * (half / hw).atan();
    let (lo, hi) = (h(-half), h(half));
    let edge = 0.5 * (lo + hi);
    // odd tail components cancel between the two sides
    let spread = (0.5 * (h(-2.0 * half) + h(2.0 * half)) - edge).abs();
    let value = sum + tail_mass * edge;
    let tail_error = tail_mass * spread;
    if tail_error > opts.tol * value.abs() {
        return Err(Error::WindowTooNarrow {
            tail: tail_error,
            tol: opts.tol * value.abs(),
        });
    }
    Ok(Convolved { value, tail_error })
}

/// (f ⊛ 𝓛_γ)(x) at every center x.
pub fn convolve_numeric<F: Fn(f64) -> f64>(
    f: F,
    gamma_sw: f64,
    centers: &[f64],
    opts: &QuadratureOptions,
) -> Result<Vec<f64>> {
    centers
        .iter()
        .map(|&x| lorentzian_average(|s| f(x - s), gamma_sw, opts).map(|c| c.value))
        .collect()
}

/// M1 cavity population averaged over a Lorentzian distribution of the
/// exciton frequency: ω_C and ω_R stay fixed while ω_X → ω_X + s.
pub fn convolve_m1_over_exciton(
    p: &ModelParams,
    tuning: &TuningPoint,
    gamma_sw: f64,
    opts: &QuadratureOptions,
) -> Result<Vec<f64>> {
    let mut q = *p;
    q.gamma_pd = 0.0;
    q.gamma_sw = 0.0;
    tuning
        .probe_offsets
        .iter()
        .map(|&nu| {
            let h = |s: f64| {
                let a = model::cavity_amplitude(&q, tuning.delta - s, nu - s);
                a.norm_sqr()
            };
            lorentzian_average(h, gamma_sw, opts).map(|c| c.value)
        })
        .collect()
}
