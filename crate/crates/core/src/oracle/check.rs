//! Randomized oracle sweep pairing every closed form with a brute-force
//! counterpart.

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::broadening::{convolved_ratio_identity, spectrum_m2, BroadeningSpec, Mechanism};
use crate::error::{Error, Result};
use crate::model::{self, ModelParams, TuningPoint};
use crate::oracle::bloch::{bloch_full_steady, bloch_linear_steady};
use crate::oracle::convolve::{convolve_m1_over_exciton, lorentzian_average, QuadratureOptions};
use crate::oracle::lindblad::{lindblad_steady, LindbladConfig};
use crate::oracle::rf_ode::rf_steady_ode;
use crate::rf::{rf_linewidth, rf_peak_intensity, saturation_relation, RfParams};

/// One comparison between a closed form and its oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    pub set: usize,
    /// Largest relative deviation observed.
    pub measured: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Worst case per check name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckSummary {
    pub name: String,
    pub runs: usize,
    pub max_measured: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions {
    pub seed: u64,
    pub n_sets: usize,
    /// Multiplies every nominal tolerance.
    pub tol_scale: f64,
    pub lindblad: bool,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            seed: 0,
            n_sets: 20,
            tol_scale: 1.0,
            lindblad: true,
        }
    }
}

const TOL_BLOCH: f64 = 1e-10;
const TOL_CONVOLVE: f64 = 1e-6;
const TOL_RF_ODE: f64 = 1e-8;
const TOL_RF_IDENTITY: f64 = 1e-10;
const TOL_LINDBLAD: f64 = 1e-3;

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

struct Draw {
    p: ModelParams,
    gamma_big: f64,
    delta: f64,
    probes: Vec<f64>,
}

fn draw(rng: &mut ChaCha8Rng, set: usize) -> Draw {
    loop {
        let kappa = rng.random_range(5.0..40.0);
        let gamma_g = rng.random_range(0.5..5.0);
        // alternate strong and weak coupling
        let g = if set.is_multiple_of(2) {
            rng.random_range(0.3..1.0) * (kappa + gamma_g) / 2.0 + 2.0
        } else {
            rng.random_range(0.02..0.2) * kappa
        };
        let p = ModelParams::new(g, kappa, gamma_g, 1.0).expect("drawn parameters are valid");
        let delta = rng.random_range(-30.0..30.0);
        if model::rabi_poles(&p, delta).is_err() {
            continue;
        }
        let mut probes: Vec<f64> = (0..3).map(|_| rng.random_range(-40.0..40.0)).collect();
        probes.sort_by(f64::total_cmp);
        return Draw {
            p,
            gamma_big: rng.random_range(0.2..3.0),
            delta,
            probes,
        };
    }
}

fn record(out: &mut Vec<CheckRecord>, name: &str, set: usize, measured: f64, tolerance: f64) {
    out.push(CheckRecord {
        name: name.into(),
        set,
        measured,
        tolerance,
        pass: measured <= tolerance,
    });
}

fn check_set(d: &Draw, set: usize, opts: &CheckOptions, rng: &mut ChaCha8Rng) -> Result<Vec<CheckRecord>> {
    let mut out = Vec::new();
    let s = opts.tol_scale;
    let tuning = TuningPoint::new(d.delta, d.probes.clone())?;

    let closed = model::cavity_population_m1(&d.p, &tuning)?;
    let closed_b = model::exciton_population_m1(&d.p, &tuning)?;
    let mut worst: f64 = 0.0;
    for ((&nu, &na), &nb) in d.probes.iter().zip(&closed).zip(&closed_b) {
        let (a, b) = bloch_linear_steady(&d.p, d.delta, nu)?;
        worst = worst.max(rel(na, a.norm_sqr())).max(rel(nb, b.norm_sqr()));
    }
    record(&mut out, "m1_vs_linear_bloch", set, worst, TOL_BLOCH * s);

    let pd = BroadeningSpec::new(Mechanism::PureDephasing, d.gamma_big)?;
    let m2_pd = spectrum_m2(&d.p, &pd, &tuning)?;
    let broadened = pd.apply_to(&d.p);
    let mut worst: f64 = 0.0;
    for (&nu, &n) in d.probes.iter().zip(&m2_pd) {
        worst = worst.max(rel(n, bloch_full_steady(&broadened, d.delta, nu)?.n_a));
    }
    record(&mut out, "m2_pd_vs_moment_bloch", set, worst, TOL_BLOCH * s);

    let sw = BroadeningSpec::new(Mechanism::SpectralWandering, d.gamma_big)?;
    let m2_sw = spectrum_m2(&d.p, &sw, &tuning)?;
    let quad = convolve_m1_over_exciton(&d.p, &tuning, d.gamma_big, &QuadratureOptions::default())?;
    let worst = m2_sw.iter().zip(&quad).map(|(a, b)| rel(*a, *b)).fold(0.0, f64::max);
    record(&mut out, "m2_sw_vs_quadrature", set, worst, TOL_CONVOLVE * s);

    let a = C64::new(rng.random_range(-20.0..20.0), -rng.random_range(0.2..10.0));
    let b = C64::new(rng.random_range(-20.0..20.0), -rng.random_range(0.2..10.0));
    let id = convolved_ratio_identity(a, b, d.gamma_big)?;
    let mut worst: f64 = 0.0;
    for &x in &d.probes {
        let q = lorentzian_average(|t| id.ratio(x - t), d.gamma_big, &QuadratureOptions::default())?;
        worst = worst.max(rel(id.evaluate(x), q.value));
    }
    record(&mut out, "ratio_identity_vs_quadrature", set, worst, TOL_CONVOLVE * s);

    let rf = RfParams::new(
        rng.random_range(0.3..2.0),
        rng.random_range(0.0..2.0),
        rng.random_range(0.0..2.0),
        rng.random_range(1.0..1e4),
    )?;
    let om = rng.random_range(0.05..6.0);
    let nu = rng.random_range(-3.0..3.0);
    let ode = rf_steady_ode(om, rf.gamma, rf.gamma_pd, nu)?;
    let gb = rf.gamma_bar();
    let drive = 2.0 * om * om * gb / rf.gamma;
    let closed = 0.5 * drive / (4.0 * nu * nu + gb * gb + drive);
    record(&mut out, "rf_closed_vs_ode", set, rel(closed, ode), TOL_RF_ODE * s);

    let i = rf_peak_intensity(om, &rf)?;
    let r = saturation_relation(rf_linewidth(om, &rf)?, rf.beta / 2.0, rf.gamma0(), rf.gamma_sw)?;
    record(&mut out, "rf_parametric_identity", set, rel(i, r), TOL_RF_IDENTITY * s);

    if opts.lindblad {
        let cfg = LindbladConfig {
            eps: 1e-3 * d.p.kappa,
            ..LindbladConfig::default()
        };
        let nu = d.probes[0];
        let one = TuningPoint::new(d.delta, vec![nu])?;
        let n = spectrum_m2(&d.p, &pd, &one)?[0] * cfg.eps * cfg.eps;
        let lind = lindblad_steady(&broadened, d.delta, nu, &cfg)?;
        let structural = lind.trace_error.max(lind.hermiticity_error).max(-lind.min_population);
        record(&mut out, "lindblad_structure", set, structural, 1e-10 * s);
        record(&mut out, "lindblad_vs_m2_pd", set, rel(n, lind.n_a), TOL_LINDBLAD * s);
    }
    Ok(out)
}

/// Runs every pairing on `opts.n_sets` random parameter sets.
pub fn run_checks(opts: &CheckOptions) -> Result<Vec<CheckRecord>> {
    if !(opts.tol_scale > 0.0) {
        return Err(Error::Config(format!("tolerance scale must be positive, got {}", opts.tol_scale)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out = Vec::new();
    for set in 0..opts.n_sets {
        let d = draw(&mut rng, set);
        out.extend(check_set(&d, set, opts, &mut rng)?);
    }
    Ok(out)
}

pub fn summarize(records: &[CheckRecord]) -> Vec<CheckSummary> {
    let mut out: Vec<CheckSummary> = Vec::new();
    for r in records {
        match out.iter_mut().find(|s| s.name == r.name) {
            Some(s) => {
                s.runs += 1;
                s.max_measured = s.max_measured.max(r.measured);
                s.pass &= r.pass;
            }
            None => out.push(CheckSummary {
                name: r.name.clone(),
                runs: 1,
                max_measured: r.measured,
                tolerance: r.tolerance,
                pass: r.pass,
            }),
        }
    }
    out
}
