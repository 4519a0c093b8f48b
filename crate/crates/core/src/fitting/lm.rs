//! Bound-projected Levenberg–Marquardt on weighted residuals.
//!
//! The objective is χ² = Σ rᵢ², where the caller supplies the weighted
//! residuals rᵢ = (dataᵢ − modelᵢ)/σᵢ. Steps are accepted only when they
//! lower χ², so the accepted sequence is monotone.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop when an accepted step lowers χ² by less than this fraction.
    pub ftol: f64,
    /// Stop when every free parameter moves by less than this fraction.
    pub xtol: f64,
    /// Relative finite-difference step.
    pub fd_step: f64,
    pub lambda0: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iterations: 500,
            ftol: 1e-14,
            xtol: 1e-12,
            fd_step: 1e-6,
            lambda0: 1e-3,
        }
    }
}

/// Box constraints and the free/fixed mask of a parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub free: Vec<bool>,
}

impl Problem {
    pub fn unbounded(n: usize) -> Self {
        Problem {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
            free: vec![true; n],
        }
    }

    fn free_indices(&self) -> Vec<usize> {
        (0..self.free.len()).filter(|&i| self.free[i]).collect()
    }

    fn clamp(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmOutcome {
    pub x: Vec<f64>,
    pub chi2: f64,
    pub n_residuals: usize,
    pub iterations: usize,
    /// χ² after every accepted step, starting with the initial value.
    pub history: Vec<f64>,
    /// Indices of the free parameters, in Jacobian column order.
    pub free: Vec<usize>,
    /// Jacobian of the weighted residuals at `x`, free columns only.
    pub jacobian: DMatrix<f64>,
}

impl LmOutcome {
    /// (JᵀJ)⁻¹ over the free parameters. Multiply by χ²/dof for the
    /// scaled covariance.
    pub fn inverse_normal_matrix(&self) -> Result<DMatrix<f64>> {
        invert_normal(&self.jacobian)
    }
}

/// Jacobian of `f` at `x` by central differences, one-sided at a bound.
pub fn jacobian<F>(f: &F, x: &[f64], r0: &[f64], problem: &Problem, free: &[usize], step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let m = r0.len();
    let mut jac = DMatrix::zeros(m, free.len());
    let mut xp = x.to_vec();
    for (col, &j) in free.iter().enumerate() {
        let h = step * x[j].abs().max(1e-3);
        let up = (x[j] + h).min(problem.upper[j]);
        let dn = (x[j] - h).max(problem.lower[j]);
        xp[j] = up;
        let rp = if up > x[j] { f(&xp)? } else { r0.to_vec() };
        xp[j] = dn;
        let rm = if dn < x[j] { f(&xp)? } else { r0.to_vec() };
        xp[j] = x[j];
        let width = up - dn;
        if width <= 0.0 {
            return Err(Error::SingularJacobian(format!("parameter {j} is pinned between equal bounds")));
        }
        for i in 0..m {
            jac[(i, col)] = (rp[i] - rm[i]) / width;
        }
    }
    Ok(jac)
}

fn invert_normal(jac: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = jac.ncols();
    let jtj = jac.transpose() * jac;
    let d: Vec<f64> = (0..n).map(|i| jtj[(i, i)].sqrt()).collect();
    if let Some(i) = d.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::SingularJacobian(format!(
            "residuals do not depend on free parameter column {i}"
        )));
    }
    // correlation-scaled normal matrix
    let scaled = DMatrix::from_fn(n, n, |i, j| jtj[(i, j)] / (d[i] * d[j]));
    let eig = scaled.clone().symmetric_eigen();
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > 1e-13) {
        return Err(Error::SingularJacobian(format!(
            "normal matrix is rank deficient (smallest scaled eigenvalue {min:.3e})"
        )));
    }
    let inv = scaled
        .try_inverse()
        .ok_or_else(|| Error::SingularJacobian("normal matrix could not be inverted".into()))?;
    Ok(DMatrix::from_fn(n, n, |i, j| inv[(i, j)] / (d[i] * d[j])))
}

fn chi2_of(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Minimizes Σ rᵢ(x)² from `x0`, which is first projected into the bounds.
pub fn minimize<F>(f: F, x0: &[f64], problem: &Problem, opts: &LmOptions) -> Result<LmOutcome>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let free = problem.free_indices();
    let mut x = x0.to_vec();
    problem.clamp(&mut x);
    let mut r = f(&x)?;
    let mut chi2 = chi2_of(&r);
    if !chi2.is_finite() {
        return Err(Error::Domain("non-finite residuals at the initial point".into()));
    }
    let mut history = vec![chi2];
    let mut lambda = opts.lambda0;
    let mut jac = jacobian(&f, &x, &r, problem, &free, opts.fd_step)?;
    let mut iterations = 0;
    let mut converged = free.is_empty();
    while !converged {
        if iterations >= opts.max_iterations {
            return Err(Error::NotConverged { iterations });
        }
        iterations += 1;
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * DVector::from_column_slice(&r);
        let mut accepted = false;
        while lambda < 1e20 {
            let mut a = jtj.clone();
            for i in 0..free.len() {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-300);
            }
            let step = match a.cholesky() {
                Some(c) => c.solve(&(-&grad)),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let mut trial = x.clone();
            for (k, &j) in free.iter().enumerate() {
                trial[j] += step[k];
            }
            problem.clamp(&mut trial);
            let rt = match f(&trial) {
                Ok(rt) => rt,
                Err(Error::ExceptionalPoint { .. }) | Err(Error::Domain(_)) => {
                    lambda *= 10.0;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let ct = chi2_of(&rt);
            if ct.is_finite() && ct < chi2 {
                let moved = free
                    .iter()
                    .map(|&j| (trial[j] - x[j]).abs() / x[j].abs().max(1e-12))
                    .fold(0.0f64, f64::max);
                let drop = (chi2 - ct) / chi2;
                x = trial;
                r = rt;
                chi2 = ct;
                history.push(chi2);
                lambda = (lambda / 10.0).max(1e-15);
                accepted = true;
                converged = drop < opts.ftol || moved < opts.xtol || chi2 == 0.0;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no descent direction left at machine precision
            converged = true;
        } else {
            jac = jacobian(&f, &x, &r, problem, &free, opts.fd_step)?;
        }
    }
    Ok(LmOutcome {
        n_residuals: r.len(),
        x,
        chi2,
        iterations,
        history,
        free,
        jacobian: jac,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_model(x: &[f64], t: f64) -> f64 {
        x[0] * (-x[1] * t).exp() + x[2]
    }

    #[test]
    fn recovers_exponential() {
        let truth = [3.0, 0.7, 0.5];
        let ts: Vec<f64> = (0..40).map(|k| k as f64 * 0.2).collect();
        let data: Vec<f64> = ts.iter().map(|&t| exp_model(&truth, t)).collect();
        let f = |x: &[f64]| Ok(ts.iter().zip(&data).map(|(&t, &d)| d - exp_model(x, t)).collect());
        let out = minimize(f, &[1.0, 2.0, 0.0], &Problem::unbounded(3), &LmOptions::default()).unwrap();
        for (a, b) in out.x.iter().zip(&truth) {
            assert!((a - b).abs() < 1e-8 * b, "{:?}", out.x);
        }
        assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn respects_bounds_and_fixed_mask() {
        let ts: Vec<f64> = (0..20).map(|k| k as f64).collect();
        let f = |x: &[f64]| Ok(ts.iter().map(|&t| 1.0 - x[0] - x[1] * t).collect());
        let problem = Problem {
            lower: vec![0.0, 0.0],
            upper: vec![0.5, 10.0],
            free: vec![true, true],
        };
        let out = minimize(f, &[0.2, 0.1], &problem, &LmOptions::default()).unwrap();
        assert!(out.x[0] <= 0.5 && out.x[1] >= 0.0);
        let fixed = Problem {
            free: vec![false, true],
            ..problem
        };
        let out = minimize(f, &[0.25, 0.1], &fixed, &LmOptions::default()).unwrap();
        assert_eq!(out.x[0], 0.25);
        assert_eq!(out.free, vec![1]);
    }

    #[test]
    fn degenerate_parameters_are_singular() {
        let ts: Vec<f64> = (0..20).map(|k| k as f64).collect();
        // only the sum x0 + x1 is identifiable
        let f = |x: &[f64]| Ok(ts.iter().map(|&t| t - (x[0] + x[1]) * t).collect());
        let out = minimize(f, &[0.3, 0.1], &Problem::unbounded(2), &LmOptions::default()).unwrap();
        assert!(matches!(out.inverse_normal_matrix(), Err(Error::SingularJacobian(_))));
    }

    #[test]
    fn iteration_limit() {
        let f = |x: &[f64]| Ok(vec![x[0].exp() - 1e6, (x[0] - 30.0).sin()]);
        let opts = LmOptions {
            max_iterations: 1,
            ..LmOptions::default()
        };
        assert!(matches!(
            minimize(f, &[0.0], &Problem::unbounded(1), &opts),
            Err(Error::NotConverged { .. })
        ));
    }
}
