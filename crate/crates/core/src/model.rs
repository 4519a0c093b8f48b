//! Weak-excitation steady state of the coherently driven Jaynes–Cummings
//! system (model M1).
//!
//! All frequencies are in µeV with ħ ≡ 1 and measured relative to the bare
//! exciton frequency ω_X. A tuning point is described by the cavity detuning
//! `delta = ω_C − ω_X` and the probe offsets `ν_R = ω_R − ω_X`. Amplitudes and
//! populations are computed for unit drive ε = 1; the physical magnitude is
//! carried by [`ModelParams::scale`].
//!
//! The driven response has two complex poles ("Rabi frequencies")
//!
//! ```text
//! ω± = δ/2 + i(κ+γ_g)/4 ± √(g² + (δ/2 + i(κ−γ_g)/4)²)
//! ```
//!
//! and the cavity population decomposes into two unit-area Lorentzians and two
//! dispersive companions located at Re ω±.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

pub type C64 = Complex64;

const I: C64 = C64::new(0.0, 1.0);

/// Relative tolerance on |g² + z²| below which the poles are treated as
/// coincident.
pub const EXCEPTIONAL_POINT_RTOL: f64 = 1e-9;

/// Dynamical rate set, all in µeV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub g: f64,
    pub kappa: f64,
    pub gamma_g: f64,
    #[serde(default)]
    pub gamma_pd: f64,
    #[serde(default)]
    pub gamma_sw: f64,
    /// S = ηκt|ε|² in counts·µeV².
    pub scale: f64,
}

impl ModelParams {
    pub fn new(g: f64, kappa: f64, gamma_g: f64, scale: f64) -> Result<Self> {
        let p = ModelParams {
            g,
            kappa,
            gamma_g,
            gamma_pd: 0.0,
            gamma_sw: 0.0,
            scale,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_pure_dephasing(mut self, gamma_pd: f64) -> Self {
        self.gamma_pd = gamma_pd;
        self
    }

    pub fn with_spectral_wandering(mut self, gamma_sw: f64) -> Self {
        self.gamma_sw = gamma_sw;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.g,
            self.kappa,
            self.gamma_g,
            self.gamma_pd,
            self.gamma_sw,
            self.scale,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return domain(format!("non-finite model parameter in {self:?}"));
        }
        if self.g < 0.0 || self.gamma_pd < 0.0 || self.gamma_sw < 0.0 || self.scale < 0.0 {
            return domain(format!("negative rate or scale in {self:?}"));
        }
        if self.kappa <= 0.0 || self.gamma_g <= 0.0 {
            return domain(format!("kappa and gamma_g must be positive in {self:?}"));
        }
        Ok(())
    }

    /// C = 2g²/(κγ_g), using the bare emitter rate.
    pub fn cooperativity(&self) -> Result<f64> {
        cooperativity(self.g, self.kappa, self.gamma_g)
    }
}

/// One detuning sweep: cavity detuning plus a strictly increasing probe grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningPoint {
    pub delta: f64,
    pub probe_offsets: Vec<f64>,
}

impl TuningPoint {
    pub fn new(delta: f64, probe_offsets: Vec<f64>) -> Result<Self> {
        if !delta.is_finite() {
            return domain("detuning must be finite");
        }
        if probe_offsets.iter().any(|v| !v.is_finite()) {
            return domain("probe offsets must be finite");
        }
        if probe_offsets.windows(2).any(|w| w[1] <= w[0]) {
            return domain("probe offsets must be strictly increasing");
        }
        Ok(TuningPoint {
            delta,
            probe_offsets,
        })
    }

    /// Evenly spaced grid of `n` points on `[start, stop]`.
    pub fn linspace(delta: f64, start: f64, stop: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return domain("grid needs at least two points");
        }
        let step = (stop - start) / (n - 1) as f64;
        Self::new(delta, (0..n).map(|i| start + step * i as f64).collect())
    }
}

/// A damped complex pole: peak position `re`, half-width `im`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexPole {
    pub re: f64,
    pub im: f64,
}

impl ComplexPole {
    pub fn fwhm(&self) -> f64 {
        2.0 * self.im.abs()
    }

    pub fn to_complex(self) -> C64 {
        C64::new(self.re, self.im)
    }
}

impl From<C64> for ComplexPole {
    fn from(z: C64) -> Self {
        ComplexPole { re: z.re, im: z.im }
    }
}

/// Unit-area Lorentzian 𝓛(ν − ω) = (Im ω/π)/((ν − Re ω)² + (Im ω)²).
pub fn lorentzian(nu: f64, pole: ComplexPole) -> f64 {
    let x = nu - pole.re;
    pole.im / PI / (x * x + pole.im * pole.im)
}

/// Dispersive companion 𝒟(ν − ω) = ((ν − Re ω)/π)/((ν − Re ω)² + (Im ω)²).
pub fn dispersive(nu: f64, pole: ComplexPole) -> f64 {
    let x = nu - pole.re;
    x / PI / (x * x + pole.im * pole.im)
}

/// Lorentzian and dispersive constituents of a decomposed spectrum at one
/// probe offset. `d_minus` already carries the minus sign, so the four terms
/// add up to the population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constituents {
    pub l_plus: f64,
    pub l_minus: f64,
    pub d_plus: f64,
    pub d_minus: f64,
}

impl Constituents {
    pub fn total(&self) -> f64 {
        self.l_plus + self.l_minus + self.d_plus + self.d_minus
    }

    pub fn scaled(self, s: f64) -> Self {
        Constituents {
            l_plus: s * self.l_plus,
            l_minus: s * self.l_minus,
            d_plus: s * self.d_plus,
            d_minus: s * self.d_minus,
        }
    }
}

/// Complex poles together with the Lorentzian/dispersive magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoleDecomposition {
    pub omega_plus: ComplexPole,
    pub omega_minus: ComplexPole,
    pub v_plus: f64,
    pub v_minus: f64,
    pub w: [f64; 2],
    pub a_l_plus: f64,
    pub a_l_minus: f64,
    pub a_d: f64,
}

impl PoleDecomposition {
    fn from_residues(omega_plus: C64, omega_minus: C64, res_plus: C64, res_minus: C64) -> Self {
        let v_plus = PI * res_plus.norm_sqr() / omega_plus.im;
        let v_minus = PI * res_minus.norm_sqr() / omega_minus.im;
        let w = 2.0 * PI * I * res_plus * res_minus.conj() / (omega_plus - omega_minus.conj());
        PoleDecomposition {
            omega_plus: omega_plus.into(),
            omega_minus: omega_minus.into(),
            v_plus,
            v_minus,
            w: [w.re, w.im],
            a_l_plus: v_plus + w.re,
            a_l_minus: v_minus + w.re,
            a_d: w.im,
        }
    }

    pub fn w(&self) -> C64 {
        C64::new(self.w[0], self.w[1])
    }

    pub fn constituents(&self, nu: f64) -> Constituents {
        Constituents {
            l_plus: self.a_l_plus * lorentzian(nu, self.omega_plus),
            l_minus: self.a_l_minus * lorentzian(nu, self.omega_minus),
            d_plus: self.a_d * dispersive(nu, self.omega_plus),
            d_minus: -self.a_d * dispersive(nu, self.omega_minus),
        }
    }

    /// Spectrum rebuilt from the four lineshape terms.
    pub fn evaluate(&self, nu: f64) -> f64 {
        self.constituents(nu).total()
    }

    /// Total area V₊ + V₋ + 2 Re W; the dispersive terms integrate to zero.
    pub fn total_area(&self) -> f64 {
        self.a_l_plus + self.a_l_minus
    }
}

/// Residues of ⟨a†⟩ and ⟨b†⟩ at the two poles, for ε = 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedRates {
    pub a_plus: C64,
    pub a_minus: C64,
    pub b_plus: C64,
    pub b_minus: C64,
}

/// z = δ/2 + i(κ−γ_g)/4 and the principal root √(g² + z²), after the
/// exceptional-point check.
fn root(p: &ModelParams, delta: f64) -> Result<(C64, C64)> {
    let z = C64::new(delta / 2.0, (p.kappa - p.gamma_g) / 4.0);
    let radicand = p.g * p.g + z * z;
    let damping_gap = (p.kappa - p.gamma_g) / 4.0;
    let tolerance = EXCEPTIONAL_POINT_RTOL * (p.g * p.g).max(damping_gap * damping_gap);
    let r = radicand.norm();
    if r <= tolerance {
        return Err(Error::ExceptionalPoint {
            radicand: r,
            tolerance,
        });
    }
    Ok((z, radicand.sqrt()))
}

fn poles_from_root(p: &ModelParams, delta: f64, r: C64) -> (C64, C64) {
    let center = C64::new(delta / 2.0, (p.kappa + p.gamma_g) / 4.0);
    (center + r, center - r)
}

/// Complex Rabi poles (ω₊, ω₋) relative to ω_X. Broadening rates are ignored.
pub fn rabi_poles(p: &ModelParams, delta: f64) -> Result<(ComplexPole, ComplexPole)> {
    let (_, r) = root(p, delta)?;
    let (wp, wm) = poles_from_root(p, delta, r);
    Ok((wp.into(), wm.into()))
}

/// Projected excitation rates ε^a± and ε^b± for ε = 1.
pub fn projected_rates(p: &ModelParams, delta: f64) -> Result<ProjectedRates> {
    let (z, r) = root(p, delta)?;
    let ratio = z / r;
    let gr = p.g / r;
    Ok(ProjectedRates {
        a_plus: 0.5 * (1.0 + ratio),
        a_minus: 0.5 * (1.0 - ratio),
        b_plus: -0.5 * gr,
        b_minus: 0.5 * gr,
    })
}

/// Common denominator g² − (ω_X − ω_R + iγ_g/2)(ω_C − ω_R + iκ/2).
fn response_denominator(p: &ModelParams, delta: f64, nu: f64) -> C64 {
    let ex = C64::new(-nu, p.gamma_g / 2.0);
    let cav = C64::new(delta - nu, p.kappa / 2.0);
    p.g * p.g - ex * cav
}

/// ⟨a†⟩ for ε = 1 in the direct rational form.
pub fn cavity_amplitude(p: &ModelParams, delta: f64, nu: f64) -> C64 {
    C64::new(-nu, p.gamma_g / 2.0) / response_denominator(p, delta, nu)
}

/// ⟨b†⟩ for ε = 1, with the sign convention whose residues are ε^b±.
pub fn exciton_amplitude(p: &ModelParams, delta: f64, nu: f64) -> C64 {
    p.g / response_denominator(p, delta, nu)
}

fn decompose_with(p: &ModelParams, delta: f64, exciton: bool) -> Result<PoleDecomposition> {
    let (wp, wm) = rabi_poles(p, delta)?;
    let rates = projected_rates(p, delta)?;
    let (rp, rm) = if exciton {
        (rates.b_plus, rates.b_minus)
    } else {
        (rates.a_plus, rates.a_minus)
    };
    Ok(PoleDecomposition::from_residues(
        wp.to_complex(),
        wm.to_complex(),
        rp,
        rm,
    ))
}

/// Lorentzian + dispersive decomposition of ⟨a†a⟩.
pub fn decompose_m1(p: &ModelParams, delta: f64) -> Result<PoleDecomposition> {
    decompose_with(p, delta, false)
}

/// Same decomposition for ⟨b†b⟩ (ε^b residues).
pub fn decompose_exciton_m1(p: &ModelParams, delta: f64) -> Result<PoleDecomposition> {
    decompose_with(p, delta, true)
}

fn residue_sum(nu: f64, wp: C64, wm: C64, rp: C64, rm: C64) -> C64 {
    let x = C64::new(nu, 0.0);
    rp / (x - wp) + rm / (x - wm)
}

/// ⟨a†a⟩ at every probe offset, evaluated from the pole-residue form.
pub fn cavity_population_m1(p: &ModelParams, tuning: &TuningPoint) -> Result<Vec<f64>> {
    population_m1(p, tuning, false)
}

/// ⟨b†b⟩ at every probe offset.
pub fn exciton_population_m1(p: &ModelParams, tuning: &TuningPoint) -> Result<Vec<f64>> {
    population_m1(p, tuning, true)
}

fn population_m1(p: &ModelParams, tuning: &TuningPoint, exciton: bool) -> Result<Vec<f64>> {
    let (wp, wm) = rabi_poles(p, tuning.delta)?;
    let rates = projected_rates(p, tuning.delta)?;
    let (rp, rm) = if exciton {
        (rates.b_plus, rates.b_minus)
    } else {
        (rates.a_plus, rates.a_minus)
    };
    let (wp, wm) = (wp.to_complex(), wm.to_complex());
    Ok(tuning
        .probe_offsets
        .iter()
        .map(|&nu| residue_sum(nu, wp, wm, rp, rm).norm_sqr())
        .collect())
}

/// Expected counts: scale × population.
pub fn counts(population: &[f64], p: &ModelParams) -> Vec<f64> {
    population.iter().map(|n| p.scale * n).collect()
}

/// C = 2g²/(κγ).
pub fn cooperativity(g: f64, kappa: f64, gamma: f64) -> Result<f64> {
    if !(kappa > 0.0) || !(gamma > 0.0) {
        return domain(format!(
            "cooperativity needs positive kappa and gamma, got κ={kappa}, γ={gamma}"
        ));
    }
    Ok(2.0 * g * g / (kappa * gamma))
}
