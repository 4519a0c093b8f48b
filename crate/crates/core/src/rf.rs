//! Resonance fluorescence of the bare emitter under resonant drive.
//!
//! A two-level emitter with radiative rate γ, pure dephasing γ_pd and
//! Lorentzian spectral wandering of FWHM γ_sw shows a power-broadened line
//!
//! ```text
//! Γ(Ω) = √(γ̄² + 2Ω²γ̄/γ) + γ_sw,        γ̄ = γ + γ_pd
//! ```
//!
//! whose peak intensity saturates at I_sat = β/2. Eliminating Ω links the
//! peak intensity directly to the observed linewidth, which is what
//! [`fit_spectral_wandering`] fits. A weak leak to a third level makes the
//! intensity fall again at high power; [`fit_three_level`] captures that.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::fitting::lm::{self, LmOptions, LmOutcome, Problem};
use crate::fitting::Estimate;

/// Transform-limited radiative rate used when deriving γ_pd, in µeV.
pub const TRANSFORM_LIMIT_GAMMA: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RfParams {
    pub gamma: f64,
    pub gamma_pd: f64,
    pub gamma_sw: f64,
    /// Instrumentation factor in counts.
    pub beta: f64,
}

impl RfParams {
    pub fn new(gamma: f64, gamma_pd: f64, gamma_sw: f64, beta: f64) -> Result<Self> {
        let rf = RfParams {
            gamma,
            gamma_pd,
            gamma_sw,
            beta,
        };
        rf.validate()?;
        Ok(rf)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return domain(format!("radiative rate must be positive, got γ={}", self.gamma));
        }
        for (name, v) in [("gamma_pd", self.gamma_pd), ("gamma_sw", self.gamma_sw), ("beta", self.beta)] {
            if !(v >= 0.0) || !v.is_finite() {
                return domain(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        Ok(())
    }

    /// γ̄ = γ + γ_pd.
    pub fn gamma_bar(&self) -> f64 {
        self.gamma + self.gamma_pd
    }

    /// Zero-power linewidth Γ₀ = γ + γ_pd + γ_sw.
    pub fn gamma0(&self) -> f64 {
        self.gamma_bar() + self.gamma_sw
    }
}

/// Observed FWHM at Rabi frequency Ω.
pub fn rf_linewidth(omega_rabi: f64, rf: &RfParams) -> Result<f64> {
    rf.validate()?;
    let gb = rf.gamma_bar();
    Ok((gb * gb + 2.0 * omega_rabi * omega_rabi * gb / rf.gamma).sqrt() + rf.gamma_sw)
}

/// Peak intensity of the wandering-broadened line at Rabi frequency Ω.
pub fn rf_peak_intensity(omega_rabi: f64, rf: &RfParams) -> Result<f64> {
    let big = rf_linewidth(omega_rabi, rf)?;
    let om2 = omega_rabi * omega_rabi;
    Ok(rf.beta * om2 / (rf.gamma_bar() * rf.gamma + 2.0 * om2) * (big - rf.gamma_sw) / big)
}

fn check_relation(big: f64, i_sat: f64, gamma0: f64, gamma_sw: f64) -> Result<()> {
    if !(gamma_sw >= 0.0) || !(gamma0 > gamma_sw) {
        return domain(format!("need Γ₀ > γ_sw ≥ 0, got Γ₀={gamma0}, γ_sw={gamma_sw}"));
    }
    if !(big >= gamma0) {
        return domain(format!("linewidth {big} is below the zero-power linewidth {gamma0}"));
    }
    if !i_sat.is_finite() {
        return domain("saturation intensity must be finite");
    }
    Ok(())
}

fn relation(big: f64, i_sat: f64, gamma0: f64, gamma_sw: f64) -> Result<f64> {
    let x = big - gamma_sw;
    if x == 0.0 || big == 0.0 {
        return domain("linewidth equals the wandering width");
    }
    let a = gamma0 - gamma_sw;
    Ok(i_sat * (x * x - a * a) / (x * big))
}

/// Peak intensity as a function of the observed linewidth Γ:
///
/// ```text
/// I = I_sat·(1 − [(Γ₀ − γ_sw)/(Γ − γ_sw)]²)·(Γ − γ_sw)/Γ
/// ```
///
/// The last factor is the peak reduction from the wandering convolution, so
/// the curve traced by ([`rf_linewidth`], [`rf_peak_intensity`]) lies on this
/// relation with I_sat = β/2 for every Ω.
pub fn saturation_relation(big: f64, i_sat: f64, gamma0: f64, gamma_sw: f64) -> Result<f64> {
    check_relation(big, i_sat, gamma0, gamma_sw)?;
    relation(big, i_sat, gamma0, gamma_sw)
}

/// I_sat·(1 − [(Γ₀ − γ_sw)/(Γ − γ_sw)]²) without the convolution factor.
/// Equal to [`saturation_relation`] only at γ_sw = 0.
pub fn saturation_relation_uncorrected(big: f64, i_sat: f64, gamma0: f64, gamma_sw: f64) -> Result<f64> {
    check_relation(big, i_sat, gamma0, gamma_sw)?;
    let r = (gamma0 - gamma_sw) / (big - gamma_sw);
    Ok(i_sat * (1.0 - r * r))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThreeLevelParams {
    pub beta3: f64,
    /// Saturation power coefficient in nW.
    pub xi0: f64,
    #[serde(default)]
    pub xi1: f64,
    pub xi2: f64,
    pub eps3: f64,
    #[serde(default)]
    pub eta1: f64,
}

impl ThreeLevelParams {
    /// Reduced parameterization with ξ₁ = η₁ = 0 and ε = 1.
    pub fn reduced(beta3: f64, xi0: f64, eps_xi2: f64) -> Self {
        ThreeLevelParams {
            beta3,
            xi0,
            xi1: 0.0,
            xi2: eps_xi2,
            eps3: 1.0,
            eta1: 0.0,
        }
    }

    pub fn eps_xi2(&self) -> f64 {
        self.eps3 * self.xi2
    }
}

/// I₃ = β(1 + εη₁)P / (ξ₀ + (2 + εξ₁)P + εξ₂P²).
pub fn three_level_intensity(power: f64, tl: &ThreeLevelParams) -> f64 {
    let e = tl.eps3;
    tl.beta3 * (1.0 + e * tl.eta1) * power / (tl.xi0 + (2.0 + e * tl.xi1) * power + e * tl.xi2 * power * power)
}

/// Two-level limit β·P/(ξ₀ + 2P).
pub fn extrapolate_two_level(power: f64, xi0: f64, beta3: f64) -> Result<f64> {
    if !(xi0 > 0.0) {
        return domain(format!("ξ₀ must be positive, got {xi0}"));
    }
    Ok(beta3 * power / (xi0 + 2.0 * power))
}

/// Γ₀ − γ_sw − γ.
pub fn derive_pure_dephasing(gamma0: f64, gamma_sw: f64, gamma: f64) -> Result<f64> {
    let v = gamma0 - gamma_sw - gamma;
    // absorbs rounding when Γ₀ = γ_sw + γ exactly
    let slack = 1e-12 * gamma0.abs().max(1.0);
    if !(v >= -slack) {
        return domain(format!(
            "Γ₀={gamma0} is below γ_sw + γ = {}; inputs are inconsistent",
            gamma_sw + gamma
        ));
    }
    Ok(if v.abs() <= slack { 0.0 } else { v })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RfPoint {
    pub power_nw: f64,
    pub intensity: f64,
    pub linewidth: f64,
    /// Excluded from fits.
    #[serde(default)]
    pub discard: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfPowerSeries {
    pub label: String,
    pub points: Vec<RfPoint>,
}

impl RfPowerSeries {
    pub fn new(label: impl Into<String>, points: Vec<RfPoint>) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            if !(p.power_nw > 0.0) || !(p.linewidth > 0.0) || !p.intensity.is_finite() {
                return domain(format!(
                    "point {i}: power and linewidth must be positive and intensity finite, got ({}, {}, {})",
                    p.power_nw, p.intensity, p.linewidth
                ));
            }
        }
        Ok(RfPowerSeries {
            label: label.into(),
            points,
        })
    }

    /// Points not flagged for discard.
    pub fn active(&self) -> Vec<RfPoint> {
        self.points.iter().filter(|p| !p.discard).copied().collect()
    }
}

fn poisson_sigma(intensity: f64) -> f64 {
    intensity.max(1.0).sqrt()
}

fn covariance(out: &LmOutcome, dof: usize) -> Result<DMatrix<f64>> {
    let inv = out.inverse_normal_matrix()?;
    Ok(inv * (out.chi2 / dof as f64))
}

fn estimate(value: f64, var: f64) -> Estimate {
    Estimate {
        value,
        sigma: var.max(0.0).sqrt(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreeLevelFit {
    pub xi0: Estimate,
    pub eps_xi2: Estimate,
    /// (εξ₂)⁻¹ in µW; `None` when εξ₂ is consistent with zero.
    pub inv_eps_xi2_uw: Option<Estimate>,
    pub unbounded: bool,
    pub beta3: Estimate,
    pub chi2: f64,
    pub dof: usize,
    /// Power of the intensity maximum √(ξ₀/εξ₂) in nW, when it exists.
    pub power_at_max: Option<f64>,
}

impl ThreeLevelFit {
    pub fn reduced_chi2(&self) -> f64 {
        self.chi2 / self.dof as f64
    }

    pub fn params(&self) -> ThreeLevelParams {
        ThreeLevelParams::reduced(self.beta3.value, self.xi0.value, self.eps_xi2.value)
    }
}

fn reduced_model(x: &[f64], power: f64) -> f64 {
    x[2] * power / (x[0] + 2.0 * power + x[1] * power * power)
}

struct ThreeLevelRun {
    out: LmOutcome,
    points: Vec<RfPoint>,
}

fn run_three_level(points: &[RfPoint]) -> Result<ThreeLevelRun> {
    if points.len() < 5 {
        return Err(Error::InsufficientData(format!(
            "three-level fit needs at least 5 unflagged points, got {}",
            points.len()
        )));
    }
    // P/I = ξ₀/β + (2/β)P + (εξ₂/β)P² is linear in the unknowns
    let n = points.len();
    let a = DMatrix::from_fn(n, 3, |i, j| points[i].power_nw.powi(j as i32));
    let b = DVector::from_iterator(n, points.iter().map(|p| p.power_nw / p.intensity.max(1e-300)));
    let c = a
        .clone()
        .svd(true, true)
        .solve(&b, 1e-14)
        .map_err(|e| Error::SingularJacobian(e.to_string()))?;
    let beta0 = if c[1] > 0.0 { 2.0 / c[1] } else { 2.0 * points.iter().map(|p| p.intensity).fold(1.0, f64::max) };
    let pmin = points.iter().map(|p| p.power_nw).fold(f64::INFINITY, f64::min);
    let x0 = [(c[0] * beta0).max(1e-3 * pmin), (c[2] * beta0).max(0.0), beta0];
    let problem = Problem {
        lower: vec![1e-9, 0.0, 1e-12],
        upper: vec![f64::INFINITY; 3],
        free: vec![true; 3],
    };
    let f = |x: &[f64]| -> Result<Vec<f64>> {
        Ok(points
            .iter()
            .map(|p| (p.intensity - reduced_model(x, p.power_nw)) / poisson_sigma(p.intensity))
            .collect())
    };
    let out = lm::minimize(f, &x0, &problem, &LmOptions::default())?;
    Ok(ThreeLevelRun {
        out,
        points: points.to_vec(),
    })
}

/// Fits βP/(ξ₀ + 2P + εξ₂P²) to the unflagged intensities with weights
/// σ² = max(I, 1). Uncertainties are scaled by √(χ²/dof).
pub fn fit_three_level(series: &RfPowerSeries) -> Result<ThreeLevelFit> {
    let run = run_three_level(&series.active())?;
    summarize_three_level(&run)
}

fn summarize_three_level(run: &ThreeLevelRun) -> Result<ThreeLevelFit> {
    let out = &run.out;
    let dof = run.points.len() - 3;
    let cov = covariance(out, dof.max(1))?;
    let x = &out.x;
    let k = estimate(x[1], cov[(1, 1)]);
    let pmax = run.points.iter().map(|p| p.power_nw).fold(0.0, f64::max);
    // a P² term below rounding over the measured range is indistinguishable from zero
    let negligible = k.value * pmax * pmax <= 1e-9 * (x[0] + 2.0 * pmax);
    let unbounded = k.value - k.sigma <= 0.0 || negligible;
    let inv = (!unbounded).then(|| Estimate {
        value: 1.0 / k.value / 1000.0,
        sigma: k.sigma / (k.value * k.value) / 1000.0,
    });
    Ok(ThreeLevelFit {
        xi0: estimate(x[0], cov[(0, 0)]),
        eps_xi2: k,
        inv_eps_xi2_uw: inv,
        unbounded,
        beta3: estimate(x[2], cov[(2, 2)]),
        chi2: out.chi2,
        dof,
        power_at_max: (!negligible && x[1] > 0.0).then(|| (x[0] / x[1]).sqrt()),
    })
}

/// Flags low-power points whose intensity exceeds the three-level fit by a
/// studentized residual above `threshold`. One point is flagged per round
/// and the fit repeated until no candidate remains. Existing flags are kept.
pub fn flag_low_power_outliers(series: &RfPowerSeries, threshold: f64) -> Result<RfPowerSeries> {
    let mut flagged = series.clone();
    loop {
        let idx: Vec<usize> = (0..flagged.points.len()).filter(|&i| !flagged.points[i].discard).collect();
        let active: Vec<RfPoint> = idx.iter().map(|&i| flagged.points[i]).collect();
        if active.len() <= 5 {
            return Ok(flagged);
        }
        let run = run_three_level(&active)?;
        let out = &run.out;
        let dof = active.len() - 3;
        let s = (out.chi2 / dof as f64).sqrt();
        let inv = out.inverse_normal_matrix()?;
        let jac = &out.jacobian;
        let cutoff = if out.x[1] > 0.0 {
            (out.x[0] / out.x[1]).sqrt()
        } else {
            let mut p: Vec<f64> = active.iter().map(|p| p.power_nw).collect();
            p.sort_by(f64::total_cmp);
            p[p.len() / 2]
        };
        let mut worst: Option<(usize, f64)> = None;
        for (row, p) in active.iter().enumerate() {
            if p.power_nw >= cutoff {
                continue;
            }
            let jr = jac.row(row);
            let h = (jr * &inv * jr.transpose())[(0, 0)];
            let r = (p.intensity - reduced_model(&out.x, p.power_nw)) / poisson_sigma(p.intensity);
            let t = r / (s * (1.0 - h).max(1e-12).sqrt());
            if t > threshold && worst.is_none_or(|(_, w)| t > w) {
                worst = Some((row, t));
            }
        }
        match worst {
            Some((row, _)) => flagged.points[idx[row]].discard = true,
            None => return Ok(flagged),
        }
    }
}

/// Affine fit I = I_sat(1 − Γ₀²Γ⁻²), the γ_sw = 0 limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineFit {
    pub i_sat: Estimate,
    pub gamma0: Estimate,
    pub chi2: f64,
    pub dof: usize,
}

impl AffineFit {
    pub fn reduced_chi2(&self) -> f64 {
        self.chi2 / self.dof as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WanderingFit {
    pub gamma_sw: Estimate,
    pub i_sat: Estimate,
    pub gamma0: Estimate,
    pub chi2: f64,
    pub dof: usize,
    pub constrained: AffineFit,
    /// χ²(γ_sw = 0) − χ².
    pub delta_chi2: f64,
}

impl WanderingFit {
    pub fn reduced_chi2(&self) -> f64 {
        self.chi2 / self.dof as f64
    }
}

/// Weighted linear regression of I on Γ⁻².
pub fn fit_affine(points: &[RfPoint]) -> Result<AffineFit> {
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "affine fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    let n = points.len();
    let w: Vec<f64> = points.iter().map(|p| 1.0 / poisson_sigma(p.intensity)).collect();
    let a = DMatrix::from_fn(n, 2, |i, j| w[i] * if j == 0 { 1.0 } else { points[i].linewidth.powi(-2) });
    let b = DVector::from_iterator(n, points.iter().zip(&w).map(|(p, w)| w * p.intensity));
    let ata = a.transpose() * &a;
    let inv = ata
        .try_inverse()
        .ok_or_else(|| Error::SingularJacobian("all linewidths are equal".into()))?;
    let c = &inv * a.transpose() * &b;
    let chi2 = (&a * &c - &b).norm_squared();
    let dof = n - 2;
    let cov = inv * (chi2 / dof as f64);
    let (i0, slope) = (c[0], c[1]);
    if !(i0 > 0.0) || !(slope < 0.0) {
        return Err(Error::InconsistentFit(format!(
            "affine fit has intercept {i0:.4e} and slope {slope:.4e}; intensity does not saturate"
        )));
    }
    let g0 = (-slope / i0).sqrt();
    // Γ₀ = √(−s/I₀): ∂/∂I₀ = −Γ₀/(2I₀), ∂/∂s = −1/(2Γ₀I₀)
    let (da, db) = (-g0 / (2.0 * i0), -1.0 / (2.0 * g0 * i0));
    let var = da * da * cov[(0, 0)] + 2.0 * da * db * cov[(0, 1)] + db * db * cov[(1, 1)];
    Ok(AffineFit {
        i_sat: estimate(i0, cov[(0, 0)]),
        gamma0: estimate(g0, var),
        chi2,
        dof,
    })
}

/// Fits (γ_sw, I_sat, Γ₀) of [`saturation_relation`] to the unflagged
/// (Γ, I) pairs with weights σ² = max(I, 1), alongside the γ_sw = 0 affine
/// fit. Uncertainties are scaled by √(χ²/dof).
pub fn fit_spectral_wandering(series: &RfPowerSeries) -> Result<WanderingFit> {
    let points = series.active();
    if points.len() < 5 {
        return Err(Error::InsufficientData(format!(
            "spectral wandering fit needs at least 5 unflagged points, got {}",
            points.len()
        )));
    }
    let gmin = points.iter().map(|p| p.linewidth).fold(f64::INFINITY, f64::min);
    let gmax = points.iter().map(|p| p.linewidth).fold(0.0, f64::max);
    if gmax < 2.0 * gmin {
        return Err(Error::InsufficientData(format!(
            "linewidths span {gmin:.3}..{gmax:.3}; at least a factor 2 is needed"
        )));
    }
    let constrained = fit_affine(&points)?;
    // x = (γ_sw, I_sat, Γ₀ − γ_sw) keeps Γ₀ > γ_sw with box bounds alone
    let problem = Problem {
        lower: vec![0.0, 1e-12, 1e-9],
        upper: vec![f64::INFINITY; 3],
        free: vec![true; 3],
    };
    let f = |x: &[f64]| -> Result<Vec<f64>> {
        points
            .iter()
            .map(|p| {
                relation(p.linewidth, x[1], x[2] + x[0], x[0]).map(|m| (p.intensity - m) / poisson_sigma(p.intensity))
            })
            .collect()
    };
    let g0 = constrained.gamma0.value.min(gmin);
    let mut best: Option<LmOutcome> = None;
    let mut last_err = None;
    for frac in [0.0, 0.2, 0.4, 0.6] {
        let sw = frac * g0;
        let x0 = [sw, constrained.i_sat.value, (g0 - sw).max(0.05 * g0)];
        match lm::minimize(f, &x0, &problem, &LmOptions::default()) {
            Ok(out) => {
                if best.as_ref().is_none_or(|b| out.chi2 < b.chi2) {
                    best = Some(out);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let out = match (best, last_err) {
        (Some(out), _) => out,
        (None, Some(e)) => return Err(e),
        (None, None) => unreachable!("at least one start runs"),
    };
    let dof = points.len() - 3;
    let cov = covariance(&out, dof).map_err(|e| match e {
        Error::SingularJacobian(m) => Error::InconsistentFit(format!("γ_sw is not identifiable: {m}")),
        e => e,
    })?;
    let x = &out.x;
    let gamma_sw = estimate(x[0], cov[(0, 0)]);
    let gamma0 = estimate(x[0] + x[2], cov[(0, 0)] + cov[(2, 2)] + 2.0 * cov[(0, 2)]);
    if !gamma_sw.sigma.is_finite() || !gamma0.sigma.is_finite() {
        return Err(Error::InconsistentFit("non-finite uncertainty on γ_sw".into()));
    }
    if gamma_sw.value - gamma_sw.sigma <= 0.0 && gamma_sw.value + gamma_sw.sigma >= gamma0.value {
        return Err(Error::InconsistentFit(format!(
            "γ_sw = {:.3} ± {:.3} spans the whole admissible range [0, Γ₀ = {:.3}]",
            gamma_sw.value, gamma_sw.sigma, gamma0.value
        )));
    }
    Ok(WanderingFit {
        gamma_sw,
        i_sat: estimate(x[1], cov[(1, 1)]),
        gamma0,
        chi2: out.chi2,
        dof,
        delta_chi2: constrained.chi2 - out.chi2,
        constrained,
    })
}

/// Per-series results in the layout of a bare-emitter summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfAnalysis {
    pub label: String,
    pub n_points: usize,
    pub n_flagged: usize,
    pub three_level: Option<ThreeLevelFit>,
    pub three_level_error: Option<String>,
    pub wandering: Option<WanderingFit>,
    pub wandering_error: Option<String>,
    /// γ_pd from Γ₀ − γ_sw − γ with γ at the transform limit.
    pub gamma_pd: Option<f64>,
}

/// Flags low-power outliers, then runs both fits. Fit failures are recorded
/// in the result rather than returned.
pub fn analyze_series(series: &RfPowerSeries, outlier_threshold: f64) -> RfAnalysis {
    let cleaned = flag_low_power_outliers(series, outlier_threshold).unwrap_or_else(|_| series.clone());
    let (three_level, three_level_error) = split(fit_three_level(&cleaned));
    let (wandering, wandering_error) = split(fit_spectral_wandering(&cleaned));
    let gamma_pd = wandering
        .as_ref()
        .and_then(|w| derive_pure_dephasing(w.gamma0.value, w.gamma_sw.value, TRANSFORM_LIMIT_GAMMA).ok());
    RfAnalysis {
        label: series.label.clone(),
        n_points: cleaned.points.len(),
        n_flagged: cleaned.points.iter().filter(|p| p.discard).count(),
        three_level,
        three_level_error,
        wandering,
        wandering_error,
        gamma_pd,
    }
}

fn split<T>(r: Result<T>) -> (Option<T>, Option<String>) {
    match r {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(format!("{}: {e}", e.kind()))),
    }
}

/// Measurement noise for synthetic power series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RfNoise {
    pub seed: u64,
    /// Poisson counting noise on the intensity.
    #[serde(default)]
    pub poisson: bool,
    /// Gaussian noise on the intensity, relative to its mean.
    #[serde(default)]
    pub intensity_rel: f64,
    /// Gaussian noise on the linewidth, relative to its mean.
    #[serde(default)]
    pub linewidth_rel: f64,
}

fn add_noise(points: &mut [RfPoint], noise: Option<RfNoise>) -> Result<()> {
    let Some(noise) = noise else { return Ok(()) };
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    for p in points {
        let mean = p.intensity;
        let mut i = if noise.poisson && mean > 0.0 {
            Poisson::new(mean)
                .map_err(|e| Error::Domain(e.to_string()))?
                .sample(&mut rng)
        } else {
            mean
        };
        i += noise.intensity_rel * mean * unit.sample(&mut rng);
        p.intensity = i;
        p.linewidth *= 1.0 + noise.linewidth_rel * unit.sample(&mut rng);
    }
    Ok(())
}

/// Two-level power series with Ω² = `omega_sq_per_nw`·P.
pub fn synthesize_two_level(
    label: &str,
    rf: &RfParams,
    powers: &[f64],
    omega_sq_per_nw: f64,
    noise: Option<RfNoise>,
) -> Result<RfPowerSeries> {
    let mut points = powers
        .iter()
        .map(|&power| {
            let om = (omega_sq_per_nw * power).sqrt();
            Ok(RfPoint {
                power_nw: power,
                intensity: rf_peak_intensity(om, rf)?,
                linewidth: rf_linewidth(om, rf)?,
                discard: false,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    add_noise(&mut points, noise)?;
    RfPowerSeries::new(label, points)
}

/// Power series whose intensities follow the three-level model and whose
/// linewidths follow the two-level Γ(Ω) of `rf`.
pub fn synthesize_three_level(
    label: &str,
    tl: &ThreeLevelParams,
    rf: &RfParams,
    powers: &[f64],
    omega_sq_per_nw: f64,
    noise: Option<RfNoise>,
) -> Result<RfPowerSeries> {
    let mut points = powers
        .iter()
        .map(|&power| {
            Ok(RfPoint {
                power_nw: power,
                intensity: three_level_intensity(power, tl),
                linewidth: rf_linewidth((omega_sq_per_nw * power).sqrt(), rf)?,
                discard: false,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    add_noise(&mut points, noise)?;
    RfPowerSeries::new(label, points)
}

/// Logarithmically spaced powers from `lo` to `hi` nW.
pub fn log_powers(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|k| (a + (b - a) * k as f64 / (n - 1).max(1) as f64).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::rf_steady_ode;

    fn qd3() -> RfParams {
        RfParams::new(0.8, 0.8, 1.5, 2000.0).unwrap()
    }

    #[test]
    fn linewidth_limits() {
        let rf = RfParams::new(0.8, 1.64, 1.4, 1.0).unwrap();
        assert!((rf_linewidth(0.0, &rf).unwrap() - 3.84).abs() < 1e-12);
        let bare = RfParams::new(1.3, 0.0, 0.0, 1.0).unwrap();
        let om: f64 = 2.7;
        assert!((rf_linewidth(om, &bare).unwrap() - (1.3f64 * 1.3 + 2.0 * om * om).sqrt()).abs() < 1e-12);
        let mut last = 0.0;
        for k in 0..50 {
            let g = rf_linewidth(k as f64 * 0.2, &rf).unwrap();
            assert!(g > last);
            last = g;
        }
        assert!(RfParams::new(0.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn peak_intensity_limits() {
        let rf = qd3();
        assert_eq!(rf_peak_intensity(0.0, &rf).unwrap(), 0.0);
        let sat = rf_peak_intensity(1e6, &rf).unwrap();
        assert!((sat - 1000.0).abs() < 1e-3);
    }

    #[test]
    fn peak_intensity_matches_ode() {
        let rf = RfParams::new(0.8, 0.6, 0.0, 1.0).unwrap();
        for om in [0.1, 0.5, 1.3, 4.0] {
            let ode = rf_steady_ode(om, rf.gamma, rf.gamma_pd, 0.0).unwrap();
            let closed = rf_peak_intensity(om, &rf).unwrap();
            assert!((closed - ode).abs() < 1e-8 * closed, "Ω={om}: {closed} vs {ode}");
        }
    }

    #[test]
    fn peak_intensity_matches_convolved_line() {
        use crate::oracle::convolve::{lorentzian_average, QuadratureOptions};
        // wandering peak = homogeneous RF line averaged over the emitter offset
        let rf = qd3();
        for om in [0.4, 1.5, 3.0] {
            let line = |s: f64| rf.beta * rf_steady_closed(om, &rf, s);
            let peak = lorentzian_average(line, rf.gamma_sw, &QuadratureOptions::default()).unwrap();
            let closed = rf_peak_intensity(om, &rf).unwrap();
            assert!((peak.value - closed).abs() < 1e-6 * closed, "{} vs {closed}", peak.value);
        }
    }

    fn rf_steady_closed(om: f64, rf: &RfParams, nu: f64) -> f64 {
        let gb = rf.gamma_bar();
        let drive = 2.0 * om * om * gb / rf.gamma;
        0.5 * drive / (4.0 * nu * nu + gb * gb + drive)
    }

    #[test]
    fn saturation_relation_limits() {
        assert_eq!(saturation_relation(3.1, 1000.0, 3.1, 1.5).unwrap(), 0.0);
        assert!((saturation_relation(1e9, 1000.0, 3.1, 1.5).unwrap() - 1000.0).abs() < 1e-5);
        for big in [2.0, 3.5, 7.0] {
            let v = saturation_relation(big, 10.0, 2.0, 0.0).unwrap();
            assert!((v - 10.0 * (1.0 - 4.0 / (big * big))).abs() < 1e-12);
        }
        assert!(saturation_relation(3.0, 1000.0, 3.1, 1.5).is_err());
        assert!(saturation_relation(4.0, 1000.0, 1.5, 1.5).is_err());
    }

    #[test]
    fn parametric_identity() {
        for rf in [qd3(), RfParams::new(0.8, 1.64, 1.4, 1500.0).unwrap(), RfParams::new(1.0, 0.3, 0.0, 10.0).unwrap()] {
            for k in 1..=100 {
                let om = 0.05 * k as f64;
                let big = rf_linewidth(om, &rf).unwrap();
                let i = rf_peak_intensity(om, &rf).unwrap();
                let rel = saturation_relation(big, rf.beta / 2.0, rf.gamma0(), rf.gamma_sw).unwrap();
                assert!((i - rel).abs() <= 1e-10 * i, "Ω={om}: {i} vs {rel}");
            }
        }
    }

    #[test]
    fn uncorrected_relation_differs_only_with_wandering() {
        let a = saturation_relation(6.0, 1.0, 3.1, 0.0).unwrap();
        let b = saturation_relation_uncorrected(6.0, 1.0, 3.1, 0.0).unwrap();
        assert!((a - b).abs() < 1e-15);
        let a = saturation_relation(6.0, 1.0, 3.1, 1.5).unwrap();
        let b = saturation_relation_uncorrected(6.0, 1.0, 3.1, 1.5).unwrap();
        assert!((a / b - 4.5 / 6.0).abs() < 1e-14);
    }

    fn second_differences(gamma0: f64, gamma_sw: f64, uncorrected: bool) -> Vec<f64> {
        let n = 200;
        let (u0, u1) = (gamma0.powi(-2), (3.0 * gamma0).powi(-2));
        let vals: Vec<f64> = (0..n)
            .map(|k| {
                let u = u0 + (u1 - u0) * k as f64 / (n - 1) as f64;
                let big = u.powf(-0.5).max(gamma0);
                if uncorrected {
                    saturation_relation_uncorrected(big, 1.0, gamma0, gamma_sw).unwrap()
                } else {
                    saturation_relation(big, 1.0, gamma0, gamma_sw).unwrap()
                }
            })
            .collect();
        vals.windows(3).map(|w| w[0] - 2.0 * w[1] + w[2]).collect()
    }

    #[test]
    fn linear_relation_diagnostic() {
        let flat = second_differences(3.1, 0.0, false);
        assert!(flat.iter().all(|d| d.abs() < 1e-13), "{flat:?}");
        let bent = second_differences(3.1, 1.5, false);
        assert!(bent.iter().map(|d| d.abs()).fold(0.0, f64::max) > 1e-6);
        let raw = second_differences(3.1, 1.5, true);
        assert!(raw.iter().all(|&d| d < 0.0));
    }

    #[test]
    fn three_level_limits() {
        let two = ThreeLevelParams::reduced(100.0, 7.0, 0.0);
        for p in [0.5, 7.0, 300.0] {
            assert!((three_level_intensity(p, &two) - extrapolate_two_level(p, 7.0, 100.0).unwrap()).abs() < 1e-12);
        }
        assert!((extrapolate_two_level(7.0, 7.0, 3.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((extrapolate_two_level(1e12, 7.0, 3.0).unwrap() - 1.5).abs() < 1e-10);
        assert!(extrapolate_two_level(1.0, 0.0, 1.0).is_err());
        let tl = ThreeLevelParams::reduced(100.0, 7.0, 1.0 / 111.0);
        let big = 1e7;
        let asym = 100.0 / (tl.eps_xi2() * big);
        assert!((three_level_intensity(big, &tl) / asym - 1.0).abs() < 1e-4);
        for p in log_powers(0.1, 1e4, 60) {
            assert!(extrapolate_two_level(p, 7.0, 100.0).unwrap() >= three_level_intensity(p, &tl));
        }
    }

    #[test]
    fn three_level_maximum_position() {
        let tl = ThreeLevelParams::reduced(1.0, 7.0, 1.0 / 111.0);
        let powers = log_powers(1.0, 1000.0, 20001);
        let best = powers
            .iter()
            .copied()
            .max_by(|a, b| three_level_intensity(*a, &tl).total_cmp(&three_level_intensity(*b, &tl)))
            .unwrap();
        assert!((best - (7.0f64 * 111.0).sqrt()).abs() < 0.01, "{best}");
        assert!((best - 28.0).abs() < 0.5);
    }

    fn qd1_three_level() -> ThreeLevelParams {
        ThreeLevelParams::reduced(3000.0, 7.0, 1.0 / 111.0)
    }

    #[test]
    fn three_level_round_trip() {
        let tl = qd1_three_level();
        let rf = RfParams::new(0.8, 1.64, 1.4, 1.0).unwrap();
        let s = synthesize_three_level("qd1", &tl, &rf, &log_powers(0.5, 500.0, 25), 0.1, None).unwrap();
        let fit = fit_three_level(&s).unwrap();
        assert!((fit.xi0.value / 7.0 - 1.0).abs() < 1e-6);
        assert!((fit.eps_xi2.value * 111.0 - 1.0).abs() < 1e-6);
        assert!((fit.beta3.value / 3000.0 - 1.0).abs() < 1e-6);
        assert!((fit.inv_eps_xi2_uw.unwrap().value - 0.111).abs() < 1e-6);
        assert!(!fit.unbounded);
    }

    #[test]
    fn three_level_noisy() {
        let tl = qd1_three_level();
        let rf = RfParams::new(0.8, 1.64, 1.4, 1.0).unwrap();
        let noise = RfNoise {
            seed: 7,
            poisson: false,
            intensity_rel: 0.05,
            linewidth_rel: 0.0,
        };
        let s = synthesize_three_level("qd1", &tl, &rf, &log_powers(0.5, 500.0, 25), 0.1, Some(noise)).unwrap();
        let fit = fit_three_level(&s).unwrap();
        assert!((fit.xi0.value - 7.0).abs() < 3.0 * fit.xi0.sigma, "{:?}", fit.xi0);
        assert!(fit.xi0.sigma < 2.0);
    }

    #[test]
    fn monotone_series_is_unbounded() {
        let tl = ThreeLevelParams::reduced(3000.0, 7.0, 0.0);
        let rf = RfParams::new(0.8, 1.64, 1.4, 1.0).unwrap();
        let s = synthesize_three_level("mono", &tl, &rf, &log_powers(0.5, 500.0, 25), 0.1, None).unwrap();
        let fit = fit_three_level(&s).unwrap();
        assert!(fit.unbounded, "{:?}", fit);
        assert!(fit.inv_eps_xi2_uw.is_none());
    }

    #[test]
    fn too_few_points() {
        let rf = qd3();
        let s = synthesize_two_level("x", &rf, &[1.0, 2.0, 4.0, 8.0], 0.1, None).unwrap();
        assert!(matches!(fit_three_level(&s), Err(Error::InsufficientData(_))));
        assert!(matches!(fit_spectral_wandering(&s), Err(Error::InsufficientData(_))));
        let narrow = synthesize_two_level("x", &rf, &log_powers(0.5, 3.0, 10), 0.064, None).unwrap();
        assert!(matches!(fit_spectral_wandering(&narrow), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn low_power_excess_is_flagged() {
        let tl = qd1_three_level();
        let rf = RfParams::new(0.8, 1.64, 1.4, 1.0).unwrap();
        let noise = RfNoise {
            seed: 3,
            poisson: true,
            intensity_rel: 0.0,
            linewidth_rel: 0.0,
        };
        let mut s = synthesize_three_level("qd1", &tl, &rf, &log_powers(0.2, 500.0, 30), 0.1, Some(noise)).unwrap();
        // photoluminescence floor dominating the two weakest points
        s.points[0].intensity += 150.0;
        s.points[1].intensity += 150.0;
        let flagged = flag_low_power_outliers(&s, 3.0).unwrap();
        assert!(flagged.points[0].discard && flagged.points[1].discard);
        assert_eq!(flagged.points.iter().filter(|p| p.discard).count(), 2);
        let clean = flag_low_power_outliers(&synthesize_three_level("c", &tl, &rf, &log_powers(0.2, 500.0, 30), 0.1, Some(noise)).unwrap(), 3.0).unwrap();
        assert!(clean.points.iter().all(|p| !p.discard));
    }

    #[test]
    fn wandering_round_trip_noiseless() {
        let rf = qd3();
        let s = synthesize_two_level("qd3", &rf, &log_powers(0.5, 200.0, 20), 0.064, None).unwrap();
        let fit = fit_spectral_wandering(&s).unwrap();
        assert!((fit.gamma_sw.value - 1.5).abs() < 1e-6, "{:?}", fit.gamma_sw);
        assert!((fit.i_sat.value - 1000.0).abs() < 1e-6 * 1000.0);
        assert!((fit.gamma0.value - 3.1).abs() < 1e-6 * 3.1);
        assert!(fit.delta_chi2 > 0.0);
    }

    fn qd3_noise(seed: u64) -> RfNoise {
        RfNoise {
            seed,
            poisson: true,
            intensity_rel: 0.0,
            linewidth_rel: 0.0,
        }
    }

    #[test]
    fn wandering_recovered_under_noise() {
        let rf = RfParams::new(0.8, 0.8, 1.5, 1e5).unwrap();
        let mut hits = 0;
        for seed in 0..20 {
            let s = synthesize_two_level("qd3", &rf, &log_powers(0.5, 500.0, 25), 0.064, Some(qd3_noise(seed))).unwrap();
            let fit = fit_spectral_wandering(&s).unwrap();
            assert!(fit.gamma_sw.sigma < 0.2, "{:?}", fit.gamma_sw);
            if (fit.gamma_sw.value - 1.5).abs() < 0.2 {
                hits += 1;
            }
            assert!(fit.constrained.reduced_chi2() > 3.0 * fit.reduced_chi2());
        }
        assert!(hits >= 18, "{hits}/20");
    }

    #[test]
    fn no_wandering_gives_affine_relation() {
        let rf = RfParams::new(0.8, 0.8, 0.0, 1e5).unwrap();
        let s = synthesize_two_level("qd", &rf, &log_powers(0.5, 500.0, 25), 0.064, Some(qd3_noise(11))).unwrap();
        let fit = fit_spectral_wandering(&s).unwrap();
        assert!(fit.gamma_sw.value < 2.0 * fit.gamma_sw.sigma + 1e-9, "{:?}", fit.gamma_sw);
        let red = fit.constrained.reduced_chi2();
        assert!((0.5..1.6).contains(&red), "{red}");
        assert!((fit.constrained.gamma0.value - 1.6).abs() < 3.0 * fit.constrained.gamma0.sigma);
    }

    #[test]
    fn noisy_narrow_series_is_inconsistent() {
        let rf = RfParams::new(0.8, 2.17, 0.2, 600.0).unwrap();
        let noise = RfNoise {
            seed: 0,
            poisson: true,
            intensity_rel: 0.1,
            linewidth_rel: 0.03,
        };
        let s = synthesize_two_level("qd2", &rf, &log_powers(0.5, 100.0, 12), 0.064, Some(noise)).unwrap();
        let err = fit_spectral_wandering(&s);
        assert!(matches!(err, Err(Error::InconsistentFit(_))), "{err:?}");
        let a = analyze_series(&s, 3.0);
        assert!(a.wandering.is_none() && a.gamma_pd.is_none());
        assert!(a.wandering_error.unwrap().starts_with("InconsistentFit"));
    }

    #[test]
    fn pure_dephasing_from_table_triples() {
        assert!((derive_pure_dephasing(3.84, 1.4, 0.8).unwrap() - 1.64).abs() < 1e-12);
        assert!((derive_pure_dephasing(3.10, 1.5, 0.8).unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(derive_pure_dephasing(2.2, 1.4, 0.8).unwrap(), 0.0);
        assert!(derive_pure_dephasing(2.0, 1.4, 0.8).is_err());
    }
}
