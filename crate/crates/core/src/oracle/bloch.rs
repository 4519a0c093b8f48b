//! Steady states of the optical Bloch equations with saturation terms dropped.
//!
//! Frames and signs follow the equations of motion directly, so the exciton
//! coherence comes out as `−g/D` where the closed-form convention in
//! [`crate::model::exciton_amplitude`] uses `+g/D`. Populations agree.

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};

use crate::error::{Error, Result};
use crate::model::{ModelParams, C64};

const I: C64 = C64::new(0.0, 1.0);

/// Second-order moments of the weakly driven system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub n_a: f64,
    pub n_b: f64,
    /// ⟨b†a⟩
    pub coherence: C64,
}

/// (⟨a†⟩, ⟨b†⟩) for drive ε = 1.
pub fn bloch_linear_steady(p: &ModelParams, delta: f64, nu: f64) -> Result<(C64, C64)> {
    bloch_linear_steady_driven(p, delta, nu, 1.0)
}

/// (⟨a†⟩, ⟨b†⟩) for an arbitrary drive ε, from the 2×2 linear system
/// `d/dt (⟨a†⟩, ⟨b†⟩) = 0`. The exciton coherence decays at (γ_g + γ_pd)/2.
pub fn bloch_linear_steady_driven(p: &ModelParams, delta: f64, nu: f64, eps: f64) -> Result<(C64, C64)> {
    let cav = I * (delta - nu) - p.kappa / 2.0;
    let exc = I * (-nu) - (p.gamma_g + p.gamma_pd) / 2.0;
    let ig = I * p.g;
    let m = Matrix2::new(cav, ig, ig, exc);
    let rhs = Vector2::new(-I * eps, C64::new(0.0, 0.0));
    let x = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SingularSystem("first-moment Bloch matrix".into()))?;
    Ok((x[0], x[1]))
}

/// ⟨a†a⟩, ⟨b†b⟩ and ⟨b†a⟩ for drive ε = 1.
///
/// The moment equations are sourced by the first moments of
/// [`bloch_linear_steady`]; with γ_pd = 0 they reproduce the factorized
/// products, with γ_pd > 0 they carry the incoherent excess.
pub fn bloch_full_steady(p: &ModelParams, delta: f64, nu: f64) -> Result<Moments> {
    bloch_full_steady_driven(p, delta, nu, 1.0)
}

pub fn bloch_full_steady_driven(p: &ModelParams, delta: f64, nu: f64, eps: f64) -> Result<Moments> {
    let (a, b) = bloch_linear_steady_driven(p, delta, nu, eps)?;
    let (g, k, gg) = (p.g, p.kappa, p.gamma_g);
    let s = (gg + p.gamma_pd + k) / 2.0;
    // unknowns (n_a, n_b, Re c, Im c) with c = ⟨b†a⟩
    #[rustfmt::skip]
    let m = Matrix4::new(
        -k,  0.0, 0.0,   -2.0 * g,
        0.0, -gg, 0.0,    2.0 * g,
        0.0, 0.0, -s,     delta,
        g,   -g,  -delta, -s,
    );
    let src = Vector4::new(2.0 * eps * a.im, 0.0, eps * b.im, -eps * b.re);
    let x = m
        .lu()
        .solve(&(-src))
        .ok_or_else(|| Error::SingularSystem("second-moment Bloch matrix".into()))?;
    Ok(Moments {
        n_a: x[0],
        n_b: x[1],
        coherence: C64::new(x[2], x[3]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::broadening::{spectrum_m2, BroadeningSpec, Mechanism};
    use crate::model::{cavity_amplitude, exciton_amplitude, TuningPoint};

    fn params(seed: u64) -> (ModelParams, f64, f64) {
        let mut x = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = || {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (x >> 11) as f64 / (1u64 << 53) as f64
        };
        let p = ModelParams::new(30.0 * next(), 1.0 + 30.0 * next(), 0.2 + 5.0 * next(), 1.0).unwrap();
        (p, -30.0 + 60.0 * next(), -60.0 + 120.0 * next())
    }

    #[test]
    fn linear_solve_matches_closed_form() {
        for seed in 0..200 {
            let (p, delta, nu) = params(seed);
            let (a, b) = bloch_linear_steady(&p, delta, nu).unwrap();
            let a0 = cavity_amplitude(&p, delta, nu);
            let b0 = exciton_amplitude(&p, delta, nu);
            assert!((a - a0).norm() <= 1e-12 * a0.norm(), "seed {seed}");
            assert!((b + b0).norm() <= 1e-12 * b0.norm().max(1e-300), "seed {seed}");
        }
    }

    #[test]
    fn uncoupled_and_linear_in_drive() {
        let p = ModelParams::new(0.0, 4.0, 1.0, 1.0).unwrap();
        let (a, b) = bloch_linear_steady(&p, 3.0, 1.0).unwrap();
        assert!((a.norm_sqr() - 1.0 / (4.0 + 4.0)).abs() < 1e-15);
        assert_eq!(b.norm(), 0.0);
        let p = params(7).0;
        let (a1, b1) = bloch_linear_steady_driven(&p, 2.0, -1.0, 1.0).unwrap();
        let (a2, b2) = bloch_linear_steady_driven(&p, 2.0, -1.0, 2.0).unwrap();
        assert!((a2 - 2.0 * a1).norm() < 1e-14 * a1.norm());
        assert!((b2 - 2.0 * b1).norm() < 1e-14 * b1.norm());
    }

    #[test]
    fn factorization_without_dephasing() {
        for seed in 0..100 {
            let (p, delta, nu) = params(seed);
            let (a, b) = bloch_linear_steady(&p, delta, nu).unwrap();
            let m = bloch_full_steady(&p, delta, nu).unwrap();
            assert!((m.n_a - a.norm_sqr()).abs() <= 1e-10 * a.norm_sqr(), "seed {seed}");
            assert!((m.n_b - b.norm_sqr()).abs() <= 1e-10 * b.norm_sqr().max(1e-300), "seed {seed}");
            let c = b * a.conj();
            assert!((m.coherence - c).norm() <= 1e-10 * c.norm().max(1e-300), "seed {seed}");
        }
        let p = params(3).0;
        let zero = bloch_full_steady_driven(&p, 1.0, 2.0, 0.0).unwrap();
        assert_eq!((zero.n_a, zero.n_b, zero.coherence.norm()), (0.0, 0.0, 0.0));
    }

    #[test]
    fn dephasing_adds_incoherent_population() {
        let base = ModelParams::new(11.13, 19.84, 1.38, 1.0).unwrap();
        let spec = BroadeningSpec::new(Mechanism::PureDephasing, 1.26).unwrap();
        let p = spec.apply_to(&base);
        for &delta in &[-20.0, -5.0, 0.0, 7.5, 25.0] {
            let grid = TuningPoint::linspace(delta, -40.0, 40.0, 81).unwrap();
            let closed = spectrum_m2(&base, &spec, &grid).unwrap();
            for (&nu, &n) in grid.probe_offsets.iter().zip(&closed) {
                let m = bloch_full_steady(&p, delta, nu).unwrap();
                let (a, _) = bloch_linear_steady(&p, delta, nu).unwrap();
                assert!(m.n_a > a.norm_sqr());
                assert!((m.n_a - n).abs() <= 1e-10 * n, "δ={delta} ν={nu}: {} vs {n}", m.n_a);
            }
        }
    }
}
