//! Time integration of the resonantly driven two-level emitter.

use crate::error::{domain, Result};
use crate::oracle::ode::{integrate_to_steady, OdeOptions};

/// Steady-state ⟨b†b⟩ reached by integrating the two-level Bloch equations
/// from the ground state. `nu` is the laser offset ω_R − ω_X.
///
/// With ⟨b†⟩ = u + iv and Δ = −ν:
///
/// ```text
/// ṅ = −γn + Ωv
/// u̇ = −Δv − γ̄u/2
/// v̇ = Δu − γ̄v/2 + Ω/2 − Ωn
/// ```
pub fn rf_steady_ode(omega_rabi: f64, gamma: f64, gamma_pd: f64, nu: f64) -> Result<f64> {
    if !(gamma > 0.0) || !(gamma_pd >= 0.0) {
        return domain(format!(
            "two-level emitter needs γ > 0 and γ_pd ≥ 0, got γ={gamma}, γ_pd={gamma_pd}"
        ));
    }
    let gbar = gamma + gamma_pd;
    let detuning = -nu;
    let rhs = move |_t: f64, y: &[f64], dy: &mut [f64]| {
        let (n, u, v) = (y[0], y[1], y[2]);
        dy[0] = -gamma * n + omega_rabi * v;
        dy[1] = -detuning * v - gbar * u / 2.0;
        dy[2] = detuning * u - gbar * v / 2.0 + omega_rabi / 2.0 - omega_rabi * n;
    };
    let mut y = [0.0; 3];
    let slowest = gamma.min(gbar / 2.0);
    let opts = OdeOptions {
        rtol: 1e-12,
        atol: 1e-15,
        ..OdeOptions::default()
    };
    integrate_to_steady(rhs, &mut y, 10.0 / slowest, 400.0 / slowest, 1e-12, &opts)?;
    Ok(y[0])
}
