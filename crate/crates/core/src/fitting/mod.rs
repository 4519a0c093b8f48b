//! Global χ² fits of model spectra to multi-detuning datasets.
//!
//! One parameter set is shared by every sweep. Predicted counts are
//!
//! ```text
//! scale · ⟨a†a⟩(ν_R − x₀; δ − x₀) + A_C · 𝓛(ν_R − δ; FWHM κ) + b₀
//! ```
//!
//! where x₀ is a global offset of the exciton frequency, A_C the amplitude of
//! the bare-cavity line left by emitter blinking and b₀ a flat offset.

pub mod lm;

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::broadening::{self, BroadeningSpec, Mechanism};
use crate::error::{domain, Error, Result};
use crate::model::{self, ModelParams, PoleDecomposition, TuningPoint};

use lm::{LmOptions, Problem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "m1", alias = "M1")]
    M1,
    #[serde(rename = "m2", alias = "M2")]
    M2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// σ² = max(counts, 1)
    #[default]
    Poisson,
    Uniform,
    /// σ² = max(model, 1). Fits re-solve with weights from the current model
    /// until the parameters settle, which solves the Poisson likelihood
    /// equations.
    PoissonModel,
}

/// Model family used to compute populations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lineshape {
    pub model: ModelKind,
    #[serde(default)]
    pub mechanism: Mechanism,
}

impl Lineshape {
    pub const M1: Lineshape = Lineshape {
        model: ModelKind::M1,
        mechanism: Mechanism::SpectralWandering,
    };

    pub fn m2(mechanism: Mechanism) -> Self {
        Lineshape {
            model: ModelKind::M2,
            mechanism,
        }
    }
}

/// One detuning sweep: probe offsets (strictly increasing) and counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub delta: f64,
    pub nu: Vec<f64>,
    pub counts: Vec<f64>,
}

impl Sweep {
    pub fn new(delta: f64, nu: Vec<f64>, counts: Vec<f64>) -> Result<Self> {
        if nu.len() != counts.len() {
            return domain("probe grid and counts differ in length");
        }
        if !delta.is_finite() || nu.iter().any(|v| !v.is_finite()) {
            return domain("sweep contains non-finite frequencies");
        }
        if nu.windows(2).any(|w| w[1] <= w[0]) {
            return domain(format!("probe grid of sweep at δ = {delta} is not strictly increasing"));
        }
        if counts.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return domain(format!("sweep at δ = {delta} has negative or non-finite counts"));
        }
        Ok(Sweep { delta, nu, counts })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SpectrumDataset {
    pub sweeps: Vec<Sweep>,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl SpectrumDataset {
    pub fn n_points(&self) -> usize {
        self.sweeps.iter().map(|s| s.nu.len()).sum()
    }
}

/// Full parameter set of a fit. `a_c` holds one global amplitude or one
/// per sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitParams {
    pub g: f64,
    pub kappa: f64,
    pub gamma_g: f64,
    #[serde(default)]
    pub gamma_big: f64,
    pub scale: f64,
    #[serde(default)]
    pub omega_x: f64,
    #[serde(default = "default_a_c")]
    pub a_c: Vec<f64>,
    #[serde(default)]
    pub b0: f64,
}

fn default_a_c() -> Vec<f64> {
    vec![0.0]
}

/// Names of the entries of [`FitParams::to_vec`], before the A_C block.
pub const CORE_NAMES: [&str; 7] = ["g", "kappa", "gamma_g", "gamma_big", "scale", "omega_x", "b0"];

impl FitParams {
    pub fn from_model(p: &ModelParams, gamma_big: f64) -> Self {
        FitParams {
            g: p.g,
            kappa: p.kappa,
            gamma_g: p.gamma_g,
            gamma_big,
            scale: p.scale,
            omega_x: 0.0,
            a_c: vec![0.0],
            b0: 0.0,
        }
    }

    /// Dynamical parameters for the given lineshape; Γ goes to γ_pd or γ_sw.
    pub fn model_params(&self, line: Lineshape) -> ModelParams {
        let p = ModelParams {
            g: self.g,
            kappa: self.kappa,
            gamma_g: self.gamma_g,
            gamma_pd: 0.0,
            gamma_sw: 0.0,
            scale: self.scale,
        };
        match line.model {
            ModelKind::M1 => p,
            ModelKind::M2 => self.broadening(line).apply_to(&p),
        }
    }

    fn broadening(&self, line: Lineshape) -> BroadeningSpec {
        BroadeningSpec {
            mechanism: line.mechanism,
            gamma_big: self.gamma_big,
        }
    }

    pub fn a_c_for(&self, sweep: usize) -> f64 {
        if self.a_c.len() == 1 {
            self.a_c[0]
        } else {
            self.a_c[sweep]
        }
    }

    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = CORE_NAMES.iter().map(|s| s.to_string()).collect();
        if self.a_c.len() == 1 {
            names.push("a_c".into());
        } else {
            names.extend((0..self.a_c.len()).map(|i| format!("a_c[{i}]")));
        }
        names
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![
            self.g,
            self.kappa,
            self.gamma_g,
            self.gamma_big,
            self.scale,
            self.omega_x,
            self.b0,
        ];
        v.extend(&self.a_c);
        v
    }

    pub fn from_vec(v: &[f64]) -> Self {
        FitParams {
            g: v[0],
            kappa: v[1],
            gamma_g: v[2],
            gamma_big: v[3],
            scale: v[4],
            omega_x: v[5],
            b0: v[6],
            a_c: v[7..].to_vec(),
        }
    }
}

/// ⟨a†a⟩ (ε = 1) on a nominal grid, after the ω_X offset is applied.
pub fn population(fp: &FitParams, line: Lineshape, delta: f64, nu: &[f64]) -> Result<Vec<f64>> {
    let shifted: Vec<f64> = nu.iter().map(|v| v - fp.omega_x).collect();
    let tuning = TuningPoint::new(delta - fp.omega_x, shifted)?;
    let p = fp.model_params(line);
    match line.model {
        ModelKind::M1 => model::cavity_population_m1(&p, &tuning),
        ModelKind::M2 => broadening::spectrum_m2(&p, &fp.broadening(line), &tuning),
    }
}

/// Bare-cavity background A_C·𝓛(ν_R − δ; FWHM κ) + b₀.
pub fn background(a_c: f64, b0: f64, kappa: f64, delta: f64, nu: f64) -> f64 {
    let hw = kappa / 2.0;
    let x = nu - delta;
    a_c * hw / PI / (x * x + hw * hw) + b0
}

/// Expected counts for sweep number `index`.
pub fn model_counts(fp: &FitParams, line: Lineshape, sweep: &Sweep, index: usize) -> Result<Vec<f64>> {
    let pop = population(fp, line, sweep.delta, &sweep.nu)?;
    let a_c = fp.a_c_for(index);
    Ok(sweep
        .nu
        .iter()
        .zip(pop)
        .map(|(&nu, n)| fp.scale * n + background(a_c, fp.b0, fp.kappa, sweep.delta, nu))
        .collect())
}

fn sigmas(fp: &FitParams, line: Lineshape, data: &SpectrumDataset, weights: WeightMode) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(data.n_points());
    for (i, sweep) in data.sweeps.iter().enumerate() {
        match weights {
            WeightMode::Poisson => out.extend(sweep.counts.iter().map(|d| d.max(1.0).sqrt())),
            WeightMode::Uniform => out.extend(std::iter::repeat_n(1.0, sweep.counts.len())),
            WeightMode::PoissonModel => {
                out.extend(model_counts(fp, line, sweep, i)?.into_iter().map(|m| m.max(1.0).sqrt()))
            }
        }
    }
    Ok(out)
}

fn weighted_residuals(fp: &FitParams, line: Lineshape, data: &SpectrumDataset, sigma: &[f64]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(data.n_points());
    for (i, sweep) in data.sweeps.iter().enumerate() {
        let m = model_counts(fp, line, sweep, i)?;
        out.extend(sweep.counts.iter().zip(m).map(|(&d, mv)| d - mv));
    }
    for (r, s) in out.iter_mut().zip(sigma) {
        *r /= s;
    }
    Ok(out)
}

/// Fit configuration, as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub model: ModelKind,
    #[serde(default)]
    pub mechanism: Mechanism,
    pub init: FitParams,
    /// Per-parameter `[lower, upper]`, keyed by parameter name.
    #[serde(default)]
    pub bounds: BTreeMap<String, [f64; 2]>,
    /// Names of parameters held at their initial values.
    #[serde(default)]
    pub fixed: Vec<String>,
    #[serde(default)]
    pub weight_mode: WeightMode,
    /// One A_C per sweep instead of a global one.
    #[serde(default)]
    pub per_sweep_background: bool,
    /// Number of perturbed starts in addition to `init`.
    #[serde(default = "default_multistart")]
    pub multistart: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_ftol")]
    pub ftol: f64,
}

fn default_multistart() -> usize {
    3
}

fn default_max_iterations() -> usize {
    500
}

fn default_ftol() -> f64 {
    1e-14
}

impl FitConfig {
    pub fn new(line: Lineshape, init: FitParams) -> Self {
        FitConfig {
            model: line.model,
            mechanism: line.mechanism,
            init,
            bounds: BTreeMap::new(),
            fixed: Vec::new(),
            weight_mode: WeightMode::Poisson,
            per_sweep_background: false,
            multistart: default_multistart(),
            seed: 0,
            max_iterations: default_max_iterations(),
            ftol: default_ftol(),
        }
    }

    pub fn lineshape(&self) -> Lineshape {
        Lineshape {
            model: self.model,
            mechanism: self.mechanism,
        }
    }

    /// Initial parameters with A_C expanded to one entry per sweep if
    /// requested.
    fn initial(&self, n_sweeps: usize) -> Result<FitParams> {
        let mut init = self.init.clone();
        if self.model == ModelKind::M1 {
            init.gamma_big = 0.0;
        }
        match (self.per_sweep_background, init.a_c.len()) {
            (_, 0) => return Err(Error::Config("a_c needs at least one entry".into())),
            (true, 1) => init.a_c = vec![init.a_c[0]; n_sweeps],
            (true, n) if n != n_sweeps => {
                return Err(Error::Config(format!("{n} A_C values given for {n_sweeps} sweeps")))
            }
            (false, n) if n != 1 => init.a_c = vec![init.a_c[0]],
            _ => {}
        }
        Ok(init)
    }

    fn problem(&self, init: &FitParams) -> Result<Problem> {
        let names = init.names();
        let n = names.len();
        let mut lower = vec![f64::NEG_INFINITY; n];
        let mut upper = vec![f64::INFINITY; n];
        for (i, name) in names.iter().enumerate() {
            lower[i] = match name.as_str() {
                "kappa" | "gamma_g" => 1e-9,
                "g" | "gamma_big" | "scale" => 0.0,
                s if s.starts_with("a_c") => 0.0,
                _ => f64::NEG_INFINITY,
            };
        }
        let known = |key: &str| key == "a_c" || names.iter().any(|n| n == key);
        for (key, [lo, hi]) in &self.bounds {
            if !known(key) {
                return Err(Error::Config(format!("unknown parameter in bounds: {key}")));
            }
            if !(lo <= hi) {
                return Err(Error::Config(format!("empty bounds for {key}: [{lo}, {hi}]")));
            }
            for (i, name) in names.iter().enumerate() {
                if name == key || (key == "a_c" && name.starts_with("a_c")) {
                    lower[i] = lower[i].max(*lo);
                    upper[i] = upper[i].min(*hi);
                }
            }
        }
        let mut free = vec![true; n];
        for key in &self.fixed {
            if !known(key) {
                return Err(Error::Config(format!("unknown parameter in fixed: {key}")));
            }
            for (i, name) in names.iter().enumerate() {
                if name == key || (key == "a_c" && name.starts_with("a_c")) {
                    free[i] = false;
                }
            }
        }
        if self.model == ModelKind::M1 {
            free[3] = false;
        }
        let x = init.to_vec();
        for i in 0..n {
            if !(lower[i] <= x[i] && x[i] <= upper[i]) {
                return Err(Error::Config(format!(
                    "initial {} = {} outside bounds [{}, {}]",
                    names[i], x[i], lower[i], upper[i]
                )));
            }
        }
        Ok(Problem { lower, upper, free })
    }
}

/// χ² of `fp` against `data` and the degrees of freedom left by the free
/// parameters of `config`.
pub fn chi2(fp: &FitParams, data: &SpectrumDataset, config: &FitConfig) -> Result<(f64, usize)> {
    if data.sweeps.is_empty() || data.n_points() == 0 {
        return Err(Error::EmptyDataset);
    }
    let sigma = sigmas(fp, config.lineshape(), data, config.weight_mode)?;
    let r = weighted_residuals(fp, config.lineshape(), data, &sigma)?;
    let n_free = config.problem(fp)?.free.iter().filter(|f| **f).count();
    Ok((r.iter().map(|v| v * v).sum(), data.n_points().saturating_sub(n_free)))
}

/// Value with a 1σ uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepDecomposition {
    /// Detuning after the ω_X offset.
    pub delta: f64,
    pub decomposition: PoleDecomposition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub lineshape: Lineshape,
    pub params: FitParams,
    pub sigma: FitParams,
    pub names: Vec<String>,
    pub free: Vec<bool>,
    /// Scaled covariance over all parameters; rows of fixed ones are zero.
    pub covariance: Vec<Vec<f64>>,
    pub chi2: f64,
    pub dof: usize,
    pub cooperativity: Estimate,
    pub decompositions: Vec<SweepDecomposition>,
    pub iterations: usize,
    /// χ² after each accepted step of the winning start.
    pub history: Vec<f64>,
}

impl FitResult {
    pub fn reduced_chi2(&self) -> f64 {
        self.chi2 / self.dof as f64
    }

    fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Covariance entry by parameter names.
    pub fn cov(&self, a: &str, b: &str) -> f64 {
        match (self.index(a), self.index(b)) {
            (Some(i), Some(j)) => self.covariance[i][j],
            _ => 0.0,
        }
    }
}

fn latin_hypercube(rng: &mut ChaCha8Rng, n: usize, dims: usize) -> Vec<Vec<f64>> {
    let mut columns = Vec::with_capacity(dims);
    for _ in 0..dims {
        let mut strata: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            strata.swap(i, j);
        }
        columns.push(
            strata
                .into_iter()
                .map(|s| (s as f64 + rng.random::<f64>()) / n as f64)
                .collect::<Vec<f64>>(),
        );
    }
    (0..n).map(|i| columns.iter().map(|c| c[i]).collect()).collect()
}

/// Multistart damped least squares over all sweeps at once.
pub fn fit_global(data: &SpectrumDataset, config: &FitConfig) -> Result<FitResult> {
    if data.sweeps.is_empty() || data.n_points() == 0 {
        return Err(Error::EmptyDataset);
    }
    let line = config.lineshape();
    let init = config.initial(data.sweeps.len())?;
    let problem = config.problem(&init)?;
    let free_idx: Vec<usize> = (0..problem.free.len()).filter(|&i| problem.free[i]).collect();
    let n_points = data.n_points();
    if n_points <= free_idx.len() {
        return Err(Error::InsufficientData(format!(
            "{n_points} points for {} free parameters",
            free_idx.len()
        )));
    }
    let x0 = init.to_vec();
    let mut starts = vec![x0.clone()];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for u in latin_hypercube(&mut rng, config.multistart, free_idx.len()) {
        let mut x = x0.clone();
        for (k, &j) in free_idx.iter().enumerate() {
            x[j] = x0[j] * (1.0 + 0.4 * (u[k] - 0.5));
        }
        starts.push(x);
    }
    let opts = LmOptions {
        max_iterations: config.max_iterations,
        ftol: config.ftol,
        ..LmOptions::default()
    };
    let mut sigma = sigmas(&init, line, data, config.weight_mode)?;
    let mut best: Option<lm::LmOutcome> = None;
    let mut last_err = None;
    for x in &starts {
        let residuals = |x: &[f64]| weighted_residuals(&FitParams::from_vec(x), line, data, &sigma);
        match lm::minimize(residuals, x, &problem, &opts) {
            Ok(out) => {
                if best.as_ref().is_none_or(|b| out.chi2 < b.chi2) {
                    best = Some(out);
                }
            }
            Err(e @ Error::SingularJacobian(_)) => return Err(e),
            Err(e) => last_err = Some(e),
        }
    }
    let mut best = match best {
        Some(b) => b,
        None => return Err(last_err.unwrap_or(Error::NotConverged { iterations: 0 })),
    };
    if config.weight_mode == WeightMode::PoissonModel {
        for _ in 0..20 {
            sigma = sigmas(&FitParams::from_vec(&best.x), line, data, config.weight_mode)?;
            let residuals = |x: &[f64]| weighted_residuals(&FitParams::from_vec(x), line, data, &sigma);
            let next = lm::minimize(residuals, &best.x, &problem, &opts)?;
            let moved = best
                .free
                .iter()
                .map(|&j| (next.x[j] - best.x[j]).abs() / best.x[j].abs().max(1e-12))
                .fold(0.0f64, f64::max);
            best = next;
            if moved < 1e-9 {
                break;
            }
        }
    }
    let dof = n_points - free_idx.len();
    let inv = best.inverse_normal_matrix()?;
    let factor = best.chi2 / dof as f64;
    let n = x0.len();
    let mut covariance = vec![vec![0.0; n]; n];
    for (a, &i) in best.free.iter().enumerate() {
        for (b, &j) in best.free.iter().enumerate() {
            covariance[i][j] = inv[(a, b)] * factor;
        }
    }
    let sigma: Vec<f64> = (0..n).map(|i| covariance[i][i].max(0.0).sqrt()).collect();
    let params = FitParams::from_vec(&best.x);
    let mut decompositions = Vec::with_capacity(data.sweeps.len());
    for sweep in &data.sweeps {
        let delta = sweep.delta - params.omega_x;
        let p = params.model_params(line);
        let decomposition = match line.model {
            ModelKind::M1 => model::decompose_m1(&p, delta)?,
            ModelKind::M2 => broadening::decompose_m2(&p, &params.broadening(line), delta)?,
        };
        decompositions.push(SweepDecomposition { delta, decomposition });
    }
    let mut result = FitResult {
        lineshape: line,
        names: init.names(),
        free: problem.free.clone(),
        sigma: FitParams::from_vec(&sigma),
        params,
        covariance,
        chi2: best.chi2,
        dof,
        cooperativity: Estimate { value: 0.0, sigma: 0.0 },
        decompositions,
        iterations: best.iterations,
        history: best.history,
    };
    result.cooperativity = cooperativity_with_uncertainty(&result)?;
    Ok(result)
}

/// C = 2g²/(κγ_g) with first-order propagation of the 3×3 covariance of
/// (g, κ, γ_g). γ_g is the bare rate, not the broadened one.
pub fn cooperativity_propagated(g: f64, kappa: f64, gamma: f64, cov: &[[f64; 3]; 3]) -> Result<Estimate> {
    let c = model::cooperativity(g, kappa, gamma)?;
    let grad = [2.0 * c / g.max(f64::MIN_POSITIVE), -c / kappa, -c / gamma];
    let grad = if g == 0.0 { [0.0, 0.0, 0.0] } else { grad };
    let mut var = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            var += grad[i] * cov[i][j] * grad[j];
        }
    }
    Ok(Estimate {
        value: c,
        sigma: var.max(0.0).sqrt(),
    })
}

pub fn cooperativity_with_uncertainty(result: &FitResult) -> Result<Estimate> {
    let names = ["g", "kappa", "gamma_g"];
    let mut cov = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            cov[i][j] = result.cov(names[i], names[j]);
        }
    }
    let p = &result.params;
    cooperativity_propagated(p.g, p.kappa, p.gamma_g, &cov)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Noise {
    None,
    Poisson { seed: u64 },
}

/// Synthetic dataset on the given (detuning, probe grid) design.
pub fn generate_synthetic(fp: &FitParams, line: Lineshape, design: &[(f64, Vec<f64>)], noise: Noise) -> Result<SpectrumDataset> {
    let mut rng = match noise {
        Noise::Poisson { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Noise::None => None,
    };
    let mut sweeps = Vec::with_capacity(design.len());
    for (i, (delta, grid)) in design.iter().enumerate() {
        let shell = Sweep::new(*delta, grid.clone(), vec![0.0; grid.len()])?;
        let mean = model_counts(fp, line, &shell, i)?;
        let counts = match rng.as_mut() {
            None => mean.into_iter().map(|m| m.max(0.0)).collect(),
            Some(rng) => mean
                .into_iter()
                .map(|m| {
                    if m > 0.0 {
                        Poisson::new(m).map(|d| d.sample(rng)).unwrap_or(0.0)
                    } else {
                        0.0
                    }
                })
                .collect(),
        };
        sweeps.push(Sweep { counts, ..shell });
    }
    let mut meta = BTreeMap::new();
    meta.insert("source".into(), "synthetic".into());
    if let Noise::Poisson { seed } = noise {
        meta.insert("seed".into(), seed.to_string());
    }
    Ok(SpectrumDataset { sweeps, meta })
}

/// counts − A_C·𝓛 − b₀ for every sweep, optionally clamped at zero.
pub fn subtract_background(data: &SpectrumDataset, fp: &FitParams, clamp: bool) -> SpectrumDataset {
    let sweeps = data
        .sweeps
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let a_c = fp.a_c_for(i);
            let counts = s
                .nu
                .iter()
                .zip(&s.counts)
                .map(|(&nu, &c)| {
                    let v = c - background(a_c, fp.b0, fp.kappa, s.delta, nu);
                    if clamp {
                        v.max(0.0)
                    } else {
                        v
                    }
                })
                .collect();
            Sweep {
                delta: s.delta,
                nu: s.nu.clone(),
                counts,
            }
        })
        .collect();
    SpectrumDataset {
        sweeps,
        meta: data.meta.clone(),
    }
}

/// Indices of strict interior local maxima.
pub fn local_maxima(values: &[f64]) -> Vec<usize> {
    (1..values.len().saturating_sub(1))
        .filter(|&i| values[i] > values[i - 1] && values[i] > values[i + 1])
        .collect()
}
