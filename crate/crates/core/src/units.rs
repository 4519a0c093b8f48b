//! Unit conversions from laboratory quantities to rates in µeV (ħ ≡ 1).

use crate::error::{domain, Result};

/// ħ in µeV·ps.
pub const HBAR_UEV_PS: f64 = 658.211_956_9;

/// hc in µeV·nm.
pub const HC_UEV_NM: f64 = 1.239_841_98e9;

/// Transform-limited linewidth ħ/τ in µeV for a radiative lifetime in ps.
pub fn lifetime_to_linewidth(tau_ps: f64) -> Result<f64> {
    if tau_ps.is_nan() || tau_ps <= 0.0 {
        return domain(format!("lifetime must be positive, got {tau_ps}"));
    }
    Ok(HBAR_UEV_PS / tau_ps)
}

/// Cavity loss rate κ = (hc/λ)/Q in µeV.
pub fn q_to_kappa(q_factor: f64, lambda_nm: f64) -> Result<f64> {
    if q_factor.is_nan() || q_factor <= 0.0 || lambda_nm.is_nan() || lambda_nm <= 0.0 {
        return domain(format!(
            "Q and wavelength must be positive, got Q={q_factor}, λ={lambda_nm} nm"
        ));
    }
    Ok(HC_UEV_NM / lambda_nm / q_factor)
}

/// Coupling rate g = μ₁₂·E_vac in µeV, for a dipole moment in e·nm and a
/// vacuum field in V/m.
pub fn coupling_estimate(mu12_e_nm: f64, e_vac_v_per_m: f64) -> f64 {
    // e·nm·V/m = 1e-9 eV = 1e-3 µeV
    mu12_e_nm * e_vac_v_per_m / 1000.0
}
