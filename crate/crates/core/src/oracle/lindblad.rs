//! Steady state of the full master equation on a truncated Fock space.
//!
//! The cavity is truncated at `n_max` photons and the exciton is a two-level
//! system, so ρ lives on a `2(n_max + 1)`-dimensional space. The generator is
//! vectorized column-wise, `vec(AρB) = (Bᵀ ⊗ A) vec(ρ)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelParams, C64};
use crate::oracle::ode::{integrate, OdeOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SteadyMethod {
    #[default]
    NullSpace,
    TimeIntegration,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LindbladConfig {
    pub n_max: usize,
    /// Drive amplitude ε in µeV.
    pub eps: f64,
    pub method: SteadyMethod,
    /// Integration horizon for [`SteadyMethod::TimeIntegration`] (µeV⁻¹).
    pub t_end: f64,
    /// Relative tolerance for the truncation check and the integrator.
    pub rtol: f64,
}

impl Default for LindbladConfig {
    fn default() -> Self {
        LindbladConfig {
            n_max: 6,
            eps: 0.2,
            method: SteadyMethod::NullSpace,
            t_end: 20.0,
            rtol: 1e-8,
        }
    }
}

impl LindbladConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_max < 2 {
            return Err(Error::Config(format!("n_max must be at least 2, got {}", self.n_max)));
        }
        if !(self.eps > 0.0) || !(self.rtol > 0.0) || !(self.t_end > 0.0) {
            return Err(Error::Config("eps, rtol and t_end must be positive".into()));
        }
        Ok(())
    }
}

/// Steady-state populations and the diagnostics of the final solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LindbladSteady {
    pub n_a: f64,
    pub n_b: f64,
    pub trace_error: f64,
    pub hermiticity_error: f64,
    pub min_population: f64,
    /// Relative population change when n_max is doubled.
    pub truncation_change: f64,
}

/// Steady state at drive `cfg.eps`, checked for truncation convergence by
/// repeating the solve with twice the photon cutoff.
pub fn lindblad_steady(p: &ModelParams, delta: f64, nu: f64, cfg: &LindbladConfig) -> Result<LindbladSteady> {
    cfg.validate()?;
    let rho = steady_rho(p, delta, nu, cfg, cfg.n_max)?;
    let (n_a, n_b) = populations(&rho, cfg.n_max);
    let rho2 = steady_rho(p, delta, nu, cfg, 2 * cfg.n_max)?;
    let (n_a2, n_b2) = populations(&rho2, 2 * cfg.n_max);
    let change = ((n_a2 - n_a).abs() / n_a2.abs().max(f64::MIN_POSITIVE))
        .max((n_b2 - n_b).abs() / n_b2.abs().max(f64::MIN_POSITIVE));
    if change > cfg.rtol {
        return Err(Error::TruncationNotConverged {
            n_max: cfg.n_max,
            change,
            rtol: cfg.rtol,
        });
    }
    let d = rho.nrows();
    let trace_error = (rho.trace() - C64::new(1.0, 0.0)).norm();
    let hermiticity_error = (&rho - rho.adjoint()).iter().fold(0.0f64, |m, z| m.max(z.norm()));
    let min_population = (0..d).map(|i| rho[(i, i)].re).fold(f64::INFINITY, f64::min);
    Ok(LindbladSteady {
        n_a,
        n_b,
        trace_error,
        hermiticity_error,
        min_population,
        truncation_change: change,
    })
}

/// Basis index of |n⟩_cavity ⊗ |s⟩_exciton.
fn idx(n: usize, s: usize) -> usize {
    2 * n + s
}

fn operators(n_max: usize) -> (DMatrix<C64>, DMatrix<C64>) {
    let d = 2 * (n_max + 1);
    let mut a = DMatrix::zeros(d, d);
    let mut b = DMatrix::zeros(d, d);
    for n in 0..=n_max {
        for s in 0..2 {
            if n >= 1 {
                a[(idx(n - 1, s), idx(n, s))] = C64::new((n as f64).sqrt(), 0.0);
            }
        }
        b[(idx(n, 0), idx(n, 1))] = C64::new(1.0, 0.0);
    }
    (a, b)
}

fn kron(x: &DMatrix<C64>, y: &DMatrix<C64>) -> DMatrix<C64> {
    x.kronecker(y)
}

/// Vectorized generator 𝓛 with dρ/dt = 𝓛 ρ, in the frame rotating at ω_R.
fn generator(p: &ModelParams, delta: f64, nu: f64, eps: f64, n_max: usize) -> DMatrix<C64> {
    let (a, b) = operators(n_max);
    let d = a.nrows();
    let id = DMatrix::<C64>::identity(d, d);
    let ad = a.adjoint();
    let bd = b.adjoint();
    let na = &ad * &a;
    let nb = &bd * &b;
    let r = |x: f64| C64::new(x, 0.0);
    let h = &na * r(delta - nu) + &nb * r(-nu) + (&ad * &b + &bd * &a) * r(p.g) + (&ad + &a) * r(eps);
    let bz = &id - &nb * r(2.0);
    let i = C64::new(0.0, 1.0);
    // −i[H, ρ]
    let mut l = (kron(&id, &h) - kron(&h.transpose(), &id)) * (-i);
    let dissipator = |c: &DMatrix<C64>, rate: f64| -> DMatrix<C64> {
        let cdc = c.adjoint() * c;
        (kron(&c.conjugate(), c) * r(2.0) - kron(&id, &cdc) - kron(&cdc.transpose(), &id)) * r(rate / 2.0)
    };
    l += dissipator(&a, p.kappa);
    l += dissipator(&b, p.gamma_g);
    l += (kron(&bz.transpose(), &bz) - kron(&id, &id)) * r(p.gamma_pd / 4.0);
    l
}

fn steady_rho(p: &ModelParams, delta: f64, nu: f64, cfg: &LindbladConfig, n_max: usize) -> Result<DMatrix<C64>> {
    let l = generator(p, delta, nu, cfg.eps, n_max);
    let d = 2 * (n_max + 1);
    let v = match cfg.method {
        SteadyMethod::NullSpace => null_space(l, d)?,
        SteadyMethod::TimeIntegration => time_integrate(&l, d, cfg)?,
    };
    let mut rho = DMatrix::from_column_slice(d, d, v.as_slice());
    let tr = rho.trace();
    rho /= tr;
    Ok(rho)
}

fn null_space(mut l: DMatrix<C64>, d: usize) -> Result<DVector<C64>> {
    let dim = d * d;
    // replace the first equation by Tr ρ = 1
    for j in 0..dim {
        l[(0, j)] = C64::new(0.0, 0.0);
    }
    for k in 0..d {
        l[(0, k * d + k)] = C64::new(1.0, 0.0);
    }
    let mut rhs = DVector::zeros(dim);
    rhs[0] = C64::new(1.0, 0.0);
    l.lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SingularSystem("Lindblad generator with trace constraint".into()))
}

fn time_integrate(l: &DMatrix<C64>, d: usize, cfg: &LindbladConfig) -> Result<DVector<C64>> {
    let dim = d * d;
    // real and imaginary parts stacked; start in the joint ground state
    let mut y = vec![0.0; 2 * dim];
    y[0] = 1.0;
    let lr = l.map(|z| z.re);
    let li = l.map(|z| z.im);
    let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
        let (yr, yi) = y.split_at(dim);
        let (dr, di) = dy.split_at_mut(dim);
        for row in 0..dim {
            let mut sr = 0.0;
            let mut si = 0.0;
            for col in 0..dim {
                let (ar, ai) = (lr[(row, col)], li[(row, col)]);
                if ar != 0.0 || ai != 0.0 {
                    sr += ar * yr[col] - ai * yi[col];
                    si += ar * yi[col] + ai * yr[col];
                }
            }
            dr[row] = sr;
            di[row] = si;
        }
    };
    let opts = OdeOptions {
        rtol: cfg.rtol * 1e-2,
        atol: cfg.rtol * 1e-6,
        ..OdeOptions::default()
    };
    integrate(rhs, 0.0, &mut y, cfg.t_end, &opts)?;
    let v = DVector::from_iterator(dim, (0..dim).map(|k| C64::new(y[k], y[dim + k])));
    let residual = (l * &v).iter().fold(0.0f64, |m, z| m.max(z.norm()));
    let scale = l.iter().fold(0.0f64, |m, z| m.max(z.norm()));
    if residual > cfg.rtol * scale {
        return Err(Error::NonConvergedIntegration(format!(
            "‖𝓛ρ‖ = {residual:.3e} at t = {} (tolerance {:.3e})",
            cfg.t_end,
            cfg.rtol * scale
        )));
    }
    Ok(v)
}

fn populations(rho: &DMatrix<C64>, n_max: usize) -> (f64, f64) {
    let mut n_a = 0.0;
    let mut n_b = 0.0;
    for n in 0..=n_max {
        for s in 0..2 {
            let w = rho[(idx(n, s), idx(n, s))].re;
            n_a += n as f64 * w;
            n_b += s as f64 * w;
        }
    }
    (n_a, n_b)
}
