//! Emitter broadening (model M2): pure dephasing and Lorentzian spectral
//! wandering of the exciton frequency.
//!
//! Both mechanisms act in two ways. The emitter rate is renormalized,
//! γ_g → γ_g + Γ, and an extra positive term
//!
//! ```text
//! 𝒞 / (|ν_R − ω'₊|² |ν_R − ω'₋|²)
//! ```
//!
//! is added on top of the renormalized M1 spectrum. For pure dephasing 𝒞 is
//! independent of the probe; for spectral wandering it depends on ν_R − δ.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::model::{self, ComplexPole, ModelParams, PoleDecomposition, TuningPoint, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    #[default]
    SpectralWandering,
    PureDephasing,
}

/// Broadening mechanism and its FWHM parameter Γ (µeV).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BroadeningSpec {
    pub mechanism: Mechanism,
    pub gamma_big: f64,
}

impl BroadeningSpec {
    pub fn new(mechanism: Mechanism, gamma_big: f64) -> Result<Self> {
        if !(gamma_big >= 0.0) || !gamma_big.is_finite() {
            return domain(format!("broadening must be finite and non-negative, got {gamma_big}"));
        }
        Ok(BroadeningSpec {
            mechanism,
            gamma_big,
        })
    }

    /// Copy of `p` whose γ_pd or γ_sw carries Γ, the other rate zeroed.
    pub fn apply_to(&self, p: &ModelParams) -> ModelParams {
        let mut q = *p;
        match self.mechanism {
            Mechanism::PureDephasing => {
                q.gamma_pd = self.gamma_big;
                q.gamma_sw = 0.0;
            }
            Mechanism::SpectralWandering => {
                q.gamma_sw = self.gamma_big;
                q.gamma_pd = 0.0;
            }
        }
        q
    }
}

/// Correction magnitude 𝒞 and its recast amplitudes U±.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectionTerm {
    pub amplitude: f64,
    pub u_plus: [f64; 2],
    pub u_minus: [f64; 2],
}

impl CorrectionTerm {
    pub fn u_plus(&self) -> C64 {
        C64::new(self.u_plus[0], self.u_plus[1])
    }

    pub fn u_minus(&self) -> C64 {
        C64::new(self.u_minus[0], self.u_minus[1])
    }
}

/// γ_g → γ_g + Γ. Primed poles and magnitudes are the M1 results on the
/// returned parameters.
pub fn renormalize(p: &ModelParams, spec: &BroadeningSpec) -> ModelParams {
    let mut q = *p;
    q.gamma_g += spec.gamma_big;
    q
}

/// Probe-independent pure-dephasing correction 𝒞_pd (ε = 1), using `p.gamma_pd`.
pub fn correction_pd(p: &ModelParams, delta: f64) -> Result<f64> {
    if !(p.gamma_g > 0.0) || !(p.kappa > 0.0) {
        return domain("pure-dephasing correction needs positive gamma_g and kappa");
    }
    let (g, k, gg, gpd) = (p.g, p.kappa, p.gamma_g, p.gamma_pd);
    let total = k + gg + gpd;
    let denom = 4.0 * g * g * (k + gg) * total / (k * gg) + total * total + 4.0 * delta * delta;
    Ok(4.0 * g.powi(4) * (gpd / gg) * (total / k) / denom)
}

/// Spectral-wandering correction 𝒞_sw(ν_R) (ε = 1), using `p.gamma_sw`.
pub fn correction_sw(p: &ModelParams, nu: f64, delta: f64) -> Result<f64> {
    if !(p.gamma_g > 0.0) {
        return domain("spectral-wandering correction needs positive gamma_g");
    }
    let (g, k, gg) = (p.g, p.kappa, p.gamma_g);
    let x = nu - delta;
    let denom = 4.0 * g * g * k / gg + k * k + 4.0 * x * x;
    Ok(4.0 * g.powi(4) * (p.gamma_sw / gg) / denom)
}

/// Lorentzian average over the emitter frequency of |(x − A)/(x − B)|²,
/// in closed form. Both poles must lie in the lower half plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvolvedRatio {
    a: C64,
    b: C64,
    gamma_sw: f64,
}

pub fn convolved_ratio_identity(a: C64, b: C64, gamma_sw: f64) -> Result<ConvolvedRatio> {
    if !(a.im < 0.0) || !(b.im < 0.0) {
        return domain(format!("identity requires Im A < 0 and Im B < 0, got A={a}, B={b}"));
    }
    if !(gamma_sw >= 0.0) {
        return domain("gamma_sw must be non-negative");
    }
    Ok(ConvolvedRatio { a, b, gamma_sw })
}

impl ConvolvedRatio {
    /// The unconvolved ratio |(x − A)/(x − B)|².
    pub fn ratio(&self, x: f64) -> f64 {
        ((x - self.a) / (x - self.b)).norm_sqr()
    }

    /// Primed ratio plus the Lorentzian correction located at Re B'.
    pub fn evaluate(&self, x: f64) -> f64 {
        let shift = C64::new(0.0, self.gamma_sw / 2.0);
        let a1 = self.a - shift;
        let b1 = self.b - shift;
        let primed = ((x - a1) / (x - b1)).norm_sqr();
        let hw = b1.im.abs();
        let lorentz = hw / PI / ((x - b1.re).powi(2) + hw * hw);
        let weight = PI * self.gamma_sw / 2.0 * (self.a - self.b).norm_sqr() / (self.b.im * b1.im);
        primed + weight * lorentz
    }
}

/// Recast amplitudes U± of a constant correction 𝒞 on the primed poles.
pub fn correction_amplitudes(
    c_amplitude: f64,
    omega_p_plus: ComplexPole,
    omega_p_minus: ComplexPole,
) -> Result<CorrectionTerm> {
    let wp = omega_p_plus.to_complex();
    let wm = omega_p_minus.to_complex();
    let sep = (wp - wm).norm();
    let tolerance = 1e-12 * (wp.norm() + wm.norm()).max(1e-300);
    if sep <= tolerance {
        return Err(Error::ExceptionalPoint {
            radicand: sep,
            tolerance,
        });
    }
    let u_plus = PI / wp.im * c_amplitude / ((wp - wm) * (wp - wm.conj()));
    let u_minus = PI / wm.im * c_amplitude / ((wm - wp) * (wm - wp.conj()));
    Ok(CorrectionTerm {
        amplitude: c_amplitude,
        u_plus: [u_plus.re, u_plus.im],
        u_minus: [u_minus.re, u_minus.im],
    })
}

/// Exact M2 cavity population ⟨a†a⟩ (ε = 1). Γ from `spec` overrides the
/// broadening rates stored in `p`.
pub fn spectrum_m2(p: &ModelParams, spec: &BroadeningSpec, tuning: &TuningPoint) -> Result<Vec<f64>> {
    let broadened = spec.apply_to(p);
    let primed = renormalize(&broadened, spec);
    let base = model::cavity_population_m1(&primed, tuning)?;
    if spec.gamma_big == 0.0 {
        return Ok(base);
    }
    let (wp, wm) = model::rabi_poles(&primed, tuning.delta)?;
    let (wp, wm) = (wp.to_complex(), wm.to_complex());
    let constant = match spec.mechanism {
        Mechanism::PureDephasing => Some(correction_pd(&broadened, tuning.delta)?),
        Mechanism::SpectralWandering => None,
    };
    tuning
        .probe_offsets
        .iter()
        .zip(base)
        .map(|(&nu, n)| {
            let c = match constant {
                Some(c) => c,
                None => correction_sw(&broadened, nu, tuning.delta)?,
            };
            let x = C64::new(nu, 0.0);
            Ok(n + c / ((x - wp).norm_sqr() * (x - wm).norm_sqr()))
        })
        .collect()
}

/// Constant correction used for the lineshape recast. Spectral wandering is
/// evaluated at the centroid of the two primed peaks.
pub fn correction_term(p: &ModelParams, spec: &BroadeningSpec, delta: f64) -> Result<CorrectionTerm> {
    let broadened = spec.apply_to(p);
    let primed = renormalize(&broadened, spec);
    let (wp, wm) = model::rabi_poles(&primed, delta)?;
    let c = match spec.mechanism {
        Mechanism::PureDephasing => correction_pd(&broadened, delta)?,
        Mechanism::SpectralWandering => correction_sw(&broadened, 0.5 * (wp.re + wm.re), delta)?,
    };
    correction_amplitudes(c, wp, wm)
}

/// Decomposition of the M2 spectrum on the primed poles with 𝒞 treated as
/// constant. The magnitudes are effective ones, V± = V'± + Re U± and
/// W = Re W' + i(Im W' + Im U₊), so `a_l± = v± + Re w` still holds. For
/// reporting only; fits use [`spectrum_m2`].
pub fn decompose_m2(p: &ModelParams, spec: &BroadeningSpec, delta: f64) -> Result<PoleDecomposition> {
    let primed = renormalize(&spec.apply_to(p), spec);
    let mut d = model::decompose_m1(&primed, delta)?;
    if spec.gamma_big == 0.0 {
        return Ok(d);
    }
    let corr = correction_term(p, spec, delta)?;
    d.v_plus += corr.u_plus[0];
    d.v_minus += corr.u_minus[0];
    d.w[1] += corr.u_plus[1];
    d.a_l_plus = d.v_plus + d.w[0];
    d.a_l_minus = d.v_minus + d.w[0];
    d.a_d = d.w[1];
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_m2() -> ModelParams {
        ModelParams::new(11.13, 19.84, 1.38, 7.08e6).unwrap()
    }

    fn sw(gamma: f64) -> BroadeningSpec {
        BroadeningSpec::new(Mechanism::SpectralWandering, gamma).unwrap()
    }

    fn pd(gamma: f64) -> BroadeningSpec {
        BroadeningSpec::new(Mechanism::PureDephasing, gamma).unwrap()
    }

    #[test]
    fn renormalization() {
        let p = table_m2();
        assert_eq!(renormalize(&p, &sw(0.0)), p);
        let q = renormalize(&p, &pd(1.26));
        assert!((q.gamma_g - 2.64).abs() < 1e-12);
        let twice = renormalize(&renormalize(&p, &sw(0.63)), &sw(0.63));
        assert!((twice.gamma_g - q.gamma_g).abs() < 1e-12);
        assert!(BroadeningSpec::new(Mechanism::PureDephasing, -1.0).is_err());
    }

    #[test]
    fn pure_dephasing_correction_properties() {
        let p = table_m2();
        for delta in [-30.0, 0.0, 12.0] {
            assert_eq!(correction_pd(&p, delta).unwrap(), 0.0);
        }
        let p = p.with_pure_dephasing(1.26);
        let mut prev = correction_pd(&p, 0.0).unwrap();
        assert!(prev > 0.0);
        for k in 1..=600 {
            let delta = 0.1 * k as f64;
            let c = correction_pd(&p, delta).unwrap();
            assert!(c < prev);
            assert!((correction_pd(&p, -delta).unwrap() - c).abs() <= 1e-15 * c);
            prev = c;
        }
        let mut bad = p;
        bad.gamma_g = 0.0;
        assert!(correction_pd(&bad, 0.0).is_err());
    }

    #[test]
    fn spectral_wandering_correction_properties() {
        let p = table_m2();
        assert_eq!(correction_sw(&p, 3.0, 1.0).unwrap(), 0.0);
        let p = p.with_spectral_wandering(1.26);
        let delta = -7.0;
        let mut prev = correction_sw(&p, delta, delta).unwrap();
        for k in 1..=600 {
            let x = 0.1 * k as f64;
            let up = correction_sw(&p, delta + x, delta).unwrap();
            let down = correction_sw(&p, delta - x, delta).unwrap();
            assert!(up < prev && (up - down).abs() <= 1e-15 * up);
            assert!(up >= 0.0);
            prev = up;
        }
    }

    #[test]
    fn pd_correction_is_the_spectrum_excess() {
        let p = table_m2();
        let spec = pd(1.26);
        let grid = TuningPoint::linspace(0.0, -40.0, 40.0, 81).unwrap();
        let m2 = spectrum_m2(&p, &spec, &grid).unwrap();
        let primed = renormalize(&p, &spec);
        let m1p = model::cavity_population_m1(&primed, &grid).unwrap();
        let (wp, wm) = model::rabi_poles(&primed, 0.0).unwrap();
        let c = correction_pd(&p.with_pure_dephasing(1.26), 0.0).unwrap();
        for ((nu, a), b) in grid.probe_offsets.iter().zip(&m2).zip(&m1p) {
            let x = C64::new(*nu, 0.0);
            let denom = (x - wp.to_complex()).norm_sqr() * (x - wm.to_complex()).norm_sqr();
            assert!(((a - b) * denom - c).abs() < 1e-9 * c);
        }
    }

    #[test]
    fn identity_degenerate_cases() {
        let a = C64::new(1.0, -0.4);
        let b = C64::new(-2.0, -1.1);
        let id = convolved_ratio_identity(a, b, 0.0).unwrap();
        for x in [-5.0, 0.0, 0.7, 9.0] {
            assert!((id.evaluate(x) - id.ratio(x)).abs() < 1e-15);
        }
        let same = convolved_ratio_identity(a, a, 2.0).unwrap();
        for x in [-5.0, 0.0, 0.7, 9.0] {
            assert!((same.evaluate(x) - 1.0).abs() < 1e-15);
        }
        assert!(convolved_ratio_identity(C64::new(0.0, 0.1), b, 1.0).is_err());
        assert!(convolved_ratio_identity(a, C64::new(0.0, 0.0), 1.0).is_err());
    }

    #[test]
    fn u_amplitudes_symmetry_and_recast() {
        let p = table_m2();
        let (wp, wm) = model::rabi_poles(&p, 0.0).unwrap();
        let zero = correction_amplitudes(0.0, wp, wm).unwrap();
        assert_eq!(zero.u_plus(), C64::new(0.0, 0.0));
        assert_eq!(zero.u_minus(), C64::new(0.0, 0.0));
        assert!(correction_amplitudes(1.0, wp, wp).is_err());

        for delta in [-30.0, -17.0, -3.0, 0.0, 5.0, 25.0] {
            let (wp, wm) = model::rabi_poles(&p, delta).unwrap();
            let u = correction_amplitudes(2.5, wp, wm).unwrap();
            assert!((u.u_plus[1] + u.u_minus[1]).abs() < 1e-14 * u.u_plus().norm());
            // the four-term recast is an exact partial-fraction expansion
            for nu in [-40.0, -11.0, 0.0, 3.3, 18.0] {
                let recast = u.u_plus[0] * model::lorentzian(nu, wp)
                    + u.u_plus[1] * model::dispersive(nu, wp)
                    + u.u_minus[0] * model::lorentzian(nu, wm)
                    + u.u_minus[1] * model::dispersive(nu, wm);
                let x = C64::new(nu, 0.0);
                let direct = 2.5 / ((x - wp.to_complex()).norm_sqr() * (x - wm.to_complex()).norm_sqr());
                assert!((recast - direct).abs() < 1e-12 * direct);
            }
        }

        // strong coupling at zero detuning: U± are essentially real
        let primed = renormalize(&p, &sw(1.26));
        let (wp, wm) = model::rabi_poles(&primed, 0.0).unwrap();
        let u = correction_amplitudes(1.0, wp, wm).unwrap();
        assert!(u.u_plus[0].abs() > u.u_plus[1].abs());
        assert!(u.u_minus[0].abs() > u.u_minus[1].abs());
    }

    #[test]
    fn zero_broadening_is_m1() {
        let p = table_m2();
        let grid = TuningPoint::linspace(-17.0, -50.0, 50.0, 101).unwrap();
        let m1 = model::cavity_population_m1(&p, &grid).unwrap();
        for spec in [sw(0.0), pd(0.0)] {
            assert_eq!(spectrum_m2(&p, &spec, &grid).unwrap(), m1);
            assert_eq!(decompose_m2(&p, &spec, -17.0).unwrap(), model::decompose_m1(&p, -17.0).unwrap());
        }
    }

    #[test]
    fn m2_approaches_m1_continuously() {
        let p = table_m2();
        let grid = TuningPoint::linspace(4.0, -50.0, 50.0, 201).unwrap();
        let m1 = model::cavity_population_m1(&p, &grid).unwrap();
        let peak = m1.iter().cloned().fold(0.0, f64::max);
        for spec_of in [sw as fn(f64) -> BroadeningSpec, pd] {
            let mut last = f64::INFINITY;
            for gamma in [1e-3, 1e-6] {
                let m2 = spectrum_m2(&p, &spec_of(gamma), &grid).unwrap();
                let sup = m1.iter().zip(&m2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(sup < 10.0 * peak * gamma);
                assert!(sup < last);
                last = sup;
            }
        }
    }

    #[test]
    fn m2_dominates_renormalized_m1() {
        let p = table_m2();
        for spec in [sw(1.26), pd(1.26)] {
            for delta in [-25.0, 0.0, 9.0] {
                let grid = TuningPoint::linspace(delta, -60.0, 60.0, 241).unwrap();
                let m2 = spectrum_m2(&p, &spec, &grid).unwrap();
                let primed = model::cavity_population_m1(&renormalize(&p, &spec), &grid).unwrap();
                assert!(m2.iter().zip(&primed).all(|(a, b)| a >= b));
            }
        }
    }

    #[test]
    fn m2_decomposition_trends() {
        let p = table_m2();
        for spec in [sw(1.26), pd(1.26)] {
            for k in 0..=60 {
                let delta = -30.0 + k as f64;
                let m1 = model::decompose_m1(&p, delta).unwrap();
                let m2 = decompose_m2(&p, &spec, delta).unwrap();
                // The exciton-like branch gains Lorentzian weight; the
                // cavity-like branch may lose a little.
                let (x2, x1) = if delta < 0.0 {
                    (m2.a_l_plus, m1.a_l_plus)
                } else {
                    (m2.a_l_minus, m1.a_l_minus)
                };
                assert!(x2 > x1, "δ={delta}");
                assert!(m2.omega_plus.fwhm() > m1.omega_plus.fwhm());
                assert!(m2.omega_minus.fwhm() > m1.omega_minus.fwhm());
                assert_eq!(m2.a_l_plus, m2.v_plus + m2.w[0]);
            }
        }
    }

    #[test]
    fn pd_decomposition_reconstructs_exact_spectrum() {
        // constant 𝒞 makes the recast exact for pure dephasing
        let p = table_m2();
        let spec = pd(1.26);
        let grid = TuningPoint::linspace(-17.0, -50.0, 50.0, 101).unwrap();
        let exact = spectrum_m2(&p, &spec, &grid).unwrap();
        let d = decompose_m2(&p, &spec, -17.0).unwrap();
        for (nu, e) in grid.probe_offsets.iter().zip(exact) {
            assert!((d.evaluate(*nu) - e).abs() < 1e-10 * e);
        }
    }
}
