//! Adaptive Dormand–Prince 5(4) integrator for real state vectors.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-10,
            atol: 1e-14,
            max_steps: 2_000_000,
        }
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrates `dy/dt = f(t, y)` from `t0` to `t1` in place.
pub fn integrate<F>(mut f: F, t0: f64, y: &mut [f64], t1: f64, opts: &OdeOptions) -> Result<()>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    let mut stage = vec![0.0; n];
    let mut y5 = vec![0.0; n];
    let mut t = t0;
    let span = t1 - t0;
    if span <= 0.0 {
        return Ok(());
    }
    let mut h = 1e-3 * span;
    f(t, y, &mut k[0]);
    let mut steps = 0;
    while t < t1 {
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::NonConvergedIntegration(format!(
                "step limit {} reached at t = {t:.4e} of {t1:.4e}",
                opts.max_steps
            )));
        }
        if t + h > t1 {
            h = t1 - t;
        }
        for s in 1..7 {
            for i in 0..n {
                let mut acc = y[i];
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += h * A[s][j] * kj[i];
                }
                stage[i] = acc;
            }
            f(t + C[s] * h, &stage, &mut k[s]);
        }
        let mut err = 0.0f64;
        for i in 0..n {
            let mut s5 = y[i];
            let mut s4 = y[i];
            for j in 0..7 {
                s5 += h * B5[j] * k[j][i];
                s4 += h * B4[j] * k[j][i];
            }
            y5[i] = s5;
            let scale = opts.atol + opts.rtol * y[i].abs().max(s5.abs());
            err = err.max(((s5 - s4) / scale).abs());
        }
        if !err.is_finite() {
            return Err(Error::NonConvergedIntegration(format!(
                "non-finite state at t = {t:.4e}"
            )));
        }
        if err <= 1.0 {
            t += h;
            y.copy_from_slice(&y5);
            // first-same-as-last: the 7th stage is f at the new point
            let last = k.pop().expect("seven stages");
            k.insert(0, last);
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= factor;
        if h < 1e-14 * span.abs() {
            return Err(Error::NonConvergedIntegration(format!(
                "step size underflow at t = {t:.4e}"
            )));
        }
    }
    Ok(())
}

/// Integrates in chunks of `chunk` until one chunk changes the state by at
/// most `rtol · ‖y‖∞`, or fails once `t_max` is exceeded. Returns the time
/// reached.
pub fn integrate_to_steady<F>(
    mut f: F,
    y: &mut [f64],
    chunk: f64,
    t_max: f64,
    rtol: f64,
    opts: &OdeOptions,
) -> Result<f64>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let mut prev = y.to_vec();
    let mut t = 0.0;
    while t < t_max {
        integrate(&mut f, t, y, t + chunk, opts)?;
        t += chunk;
        let size = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let change = y.iter().zip(&prev).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if change <= rtol * size {
            return Ok(t);
        }
        prev.copy_from_slice(y);
    }
    Err(Error::NonConvergedIntegration(format!(
        "no steady state within t = {t_max:.3e}"
    )))
}
