//! File formats and reports.
//!
//! Spectrum datasets are CSV with header `detuning_ueV,omega_R_ueV,counts`;
//! resonance-fluorescence power series use
//! `power_nW,intensity_counts,linewidth_ueV[,flag]`. Lines starting with `#`
//! are comments; comments of the form `# key=value` before the header are
//! kept as dataset metadata. Numbers are written in shortest round-trip form,
//! so a load/save cycle is lossless.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitting::{self, Estimate, FitParams, FitResult, Lineshape, ModelKind, SpectrumDataset, Sweep};
use crate::model::ComplexPole;
use crate::rf::{RfAnalysis, RfPoint, RfPowerSeries};

pub const DATASET_HEADER: [&str; 3] = ["detuning_ueV", "omega_R_ueV", "counts"];
pub const RF_HEADER: [&str; 3] = ["power_nW", "intensity_counts", "linewidth_ueV"];
pub const SIMULATION_HEADER: &str = "omega_R_ueV,model_counts,background_counts,L_plus,L_minus,D_plus,D_minus";

fn parse_field(field: &str, line: u64, what: &str) -> Result<f64> {
    field.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
        line,
        message: format!("{what}: '{field}' is not a finite number"),
    })
}

fn read_meta(text: &str) -> BTreeMap<String, String> {
    let mut meta = BTreeMap::new();
    for line in text.lines() {
        let Some(rest) = line.trim_start().strip_prefix('#') else { break };
        if let Some((k, v)) = rest.split_once('=') {
            meta.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    meta
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes())
}

fn check_header(rdr: &mut csv::Reader<&[u8]>, expected: &[&str], optional: &[&str]) -> Result<usize> {
    let headers = rdr.headers().map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    let line = headers.position().map_or(1, |p| p.line());
    let got: Vec<&str> = headers.iter().collect();
    let n = got.len();
    let ok = n >= expected.len()
        && n <= expected.len() + optional.len()
        && got[..expected.len()] == *expected
        && got[expected.len()..] == optional[..n - expected.len()];
    if !ok {
        return Err(Error::Parse {
            line,
            message: format!("expected header '{}', found '{}'", expected.join(","), got.join(",")),
        });
    }
    Ok(n)
}

/// Detuning with its (ν, counts, line) rows.
type Group = (f64, Vec<(f64, f64, u64)>);

/// Parses dataset CSV text.
pub fn parse_dataset(text: &str) -> Result<SpectrumDataset> {
    let mut rdr = reader(text);
    check_header(&mut rdr, &DATASET_HEADER, &[])?;
    let mut groups: Vec<Group> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 3 {
            return Err(Error::Parse {
                line,
                message: format!("expected 3 fields, found {}", rec.len()),
            });
        }
        let delta = parse_field(&rec[0], line, "detuning_ueV")?;
        let nu = parse_field(&rec[1], line, "omega_R_ueV")?;
        let counts = parse_field(&rec[2], line, "counts")?;
        if counts < 0.0 {
            return Err(Error::Parse {
                line,
                message: format!("counts must be non-negative, got {counts}"),
            });
        }
        match groups.iter_mut().find(|(d, _)| *d == delta) {
            Some((_, rows)) => rows.push((nu, counts, line)),
            None => groups.push((delta, vec![(nu, counts, line)])),
        }
    }
    if groups.is_empty() {
        return Err(Error::EmptyDataset);
    }
    groups.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut sweeps = Vec::with_capacity(groups.len());
    for (delta, mut rows) in groups {
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::Parse {
                line: w[1].2,
                message: format!("duplicate probe frequency {} at detuning {delta}", w[1].0),
            });
        }
        let nu = rows.iter().map(|r| r.0).collect();
        let counts = rows.iter().map(|r| r.1).collect();
        sweeps.push(Sweep::new(delta, nu, counts)?);
    }
    Ok(SpectrumDataset {
        sweeps,
        meta: read_meta(text),
    })
}

pub fn load_dataset(path: &Path) -> Result<SpectrumDataset> {
    parse_dataset(&fs::read_to_string(path)?)
}

/// Dataset CSV text, metadata first.
pub fn format_dataset(data: &SpectrumDataset) -> String {
    let mut out = String::new();
    for (k, v) in &data.meta {
        let _ = writeln!(out, "# {k}={v}");
    }
    out.push_str(&DATASET_HEADER.join(","));
    out.push('\n');
    for s in &data.sweeps {
        for (nu, c) in s.nu.iter().zip(&s.counts) {
            let _ = writeln!(out, "{},{},{}", s.delta, nu, c);
        }
    }
    out
}

pub fn save_dataset(data: &SpectrumDataset, path: &Path) -> Result<()> {
    write_atomic(path, format_dataset(data).as_bytes())
}

fn parse_flag(field: &str, line: u64) -> Result<bool> {
    match field.trim().to_ascii_lowercase().as_str() {
        "" | "0" | "false" | "no" => Ok(false),
        "1" | "true" | "yes" | "x" | "discard" => Ok(true),
        other => Err(Error::Parse {
            line,
            message: format!("flag '{other}' is not one of 0/1/true/false"),
        }),
    }
}

/// Parses a resonance-fluorescence power series.
pub fn parse_rf_series(text: &str, label: &str) -> Result<RfPowerSeries> {
    let mut rdr = reader(text);
    check_header(&mut rdr, &RF_HEADER, &["flag"])?;
    let mut points = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if !(3..=4).contains(&rec.len()) {
            return Err(Error::Parse {
                line,
                message: format!("expected 3 or 4 fields, found {}", rec.len()),
            });
        }
        let point = RfPoint {
            power_nw: parse_field(&rec[0], line, "power_nW")?,
            intensity: parse_field(&rec[1], line, "intensity_counts")?,
            linewidth: parse_field(&rec[2], line, "linewidth_ueV")?,
            discard: if rec.len() == 4 { parse_flag(&rec[3], line)? } else { false },
        };
        if !(point.power_nw > 0.0) || !(point.linewidth > 0.0) {
            return Err(Error::Parse {
                line,
                message: "power and linewidth must be positive".into(),
            });
        }
        points.push(point);
    }
    if points.is_empty() {
        return Err(Error::EmptyDataset);
    }
    RfPowerSeries::new(label, points)
}

pub fn load_rf_series(path: &Path) -> Result<RfPowerSeries> {
    let label = path.file_stem().map_or_else(|| "series".into(), |s| s.to_string_lossy().into_owned());
    parse_rf_series(&fs::read_to_string(path)?, &label)
}

pub fn format_rf_series(series: &RfPowerSeries) -> String {
    let mut out = format!("{},flag\n", RF_HEADER.join(","));
    for p in &series.points {
        let _ = writeln!(out, "{},{},{},{}", p.power_nw, p.intensity, p.linewidth, u8::from(p.discard));
    }
    out
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so a failed run never leaves a partial file behind.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
    tmp.write_all(contents)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Value with its 1σ uncertainty in the last quoted digit, e.g. `11.05(2)`.
/// The uncertainty is rounded to one significant digit. Without a positive
/// uncertainty the value is printed in full.
pub fn parenthetic(value: f64, sigma: f64) -> String {
    if !(sigma > 0.0) || !sigma.is_finite() || !value.is_finite() {
        return format!("{value}");
    }
    let mut exp = sigma.log10().floor() as i32;
    let mut digit = (sigma / 10f64.powi(exp)).round();
    if digit >= 10.0 {
        digit = 1.0;
        exp += 1;
    }
    if exp < 0 {
        format!("{:.*}({})", (-exp) as usize, value, digit as u32)
    } else {
        let unit = 10f64.powi(exp);
        format!("{:.0}({:.0})", (value / unit).round() * unit, digit * unit)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportedValue {
    pub value: f64,
    pub sigma: f64,
    pub text: String,
}

impl From<Estimate> for ReportedValue {
    fn from(e: Estimate) -> Self {
        ReportedValue {
            value: e.value,
            sigma: e.sigma,
            text: parenthetic(e.value, e.sigma),
        }
    }
}

fn reported(value: f64, sigma: f64) -> ReportedValue {
    Estimate { value, sigma }.into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportedParameter {
    pub name: String,
    pub free: bool,
    #[serde(flatten)]
    pub estimate: ReportedValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    #[serde(rename = "detuning_ueV")]
    pub detuning: f64,
    /// Detuning after the exciton offset.
    pub delta: f64,
    pub omega_plus: ComplexPole,
    pub omega_minus: ComplexPole,
    /// Lineshape areas in counts·µeV.
    pub area_l_plus: f64,
    pub area_l_minus: f64,
    pub area_d: f64,
    pub background_area: f64,
}

/// Compact parameter table with value(uncertainty) strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub g: String,
    pub kappa: String,
    pub gamma: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_big: Option<String>,
    /// Scale in Mcount·µeV².
    pub scale_mcount: String,
    pub cooperativity: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub lineshape: Lineshape,
    pub parameters: Vec<ReportedParameter>,
    pub covariance_names: Vec<String>,
    pub covariance: Vec<Vec<f64>>,
    pub chi2: f64,
    pub dof: usize,
    pub reduced_chi2: f64,
    pub cooperativity: ReportedValue,
    pub table: SummaryTable,
    pub sweeps: Vec<SweepReport>,
    pub iterations: usize,
}

fn sweep_report(detuning: f64, d: &fitting::SweepDecomposition, scale: f64, a_c: f64) -> SweepReport {
    SweepReport {
        detuning,
        delta: d.delta,
        omega_plus: d.decomposition.omega_plus,
        omega_minus: d.decomposition.omega_minus,
        area_l_plus: scale * d.decomposition.a_l_plus,
        area_l_minus: scale * d.decomposition.a_l_minus,
        area_d: scale * d.decomposition.a_d,
        background_area: a_c,
    }
}

pub fn summary_table(result: &FitResult) -> SummaryTable {
    let p = &result.params;
    let s = &result.sigma;
    SummaryTable {
        g: parenthetic(p.g, s.g),
        kappa: parenthetic(p.kappa, s.kappa),
        gamma: parenthetic(p.gamma_g, s.gamma_g),
        gamma_big: (result.lineshape.model == ModelKind::M2).then(|| parenthetic(p.gamma_big, s.gamma_big)),
        scale_mcount: parenthetic(p.scale / 1e6, s.scale / 1e6),
        cooperativity: parenthetic(result.cooperativity.value, result.cooperativity.sigma),
    }
}

impl FitReport {
    pub fn new(result: &FitResult, data: &SpectrumDataset) -> Self {
        let values = result.params.to_vec();
        let sigmas = result.sigma.to_vec();
        let parameters = result
            .names
            .iter()
            .enumerate()
            .map(|(i, name)| ReportedParameter {
                name: name.clone(),
                free: result.free[i],
                estimate: reported(values[i], sigmas[i]),
            })
            .collect();
        let sweeps = data
            .sweeps
            .iter()
            .zip(&result.decompositions)
            .enumerate()
            .map(|(i, (s, d))| sweep_report(s.delta, d, result.params.scale, result.params.a_c_for(i)))
            .collect();
        FitReport {
            lineshape: result.lineshape,
            parameters,
            covariance_names: result.names.clone(),
            covariance: result.covariance.clone(),
            chi2: result.chi2,
            dof: result.dof,
            reduced_chi2: result.reduced_chi2(),
            cooperativity: result.cooperativity.into(),
            table: summary_table(result),
            sweeps,
            iterations: result.iterations,
        }
    }
}

/// `<dir>/<stem>_residuals.csv` next to a report path.
pub fn residuals_path(report: &Path) -> PathBuf {
    let stem = report.file_stem().map_or_else(|| "report".into(), |s| s.to_string_lossy().into_owned());
    report.with_file_name(format!("{stem}_residuals.csv"))
}

/// Residual table: data, model, data − model and the Poisson-normalized
/// residual (data − model)/√max(model, 1).
pub fn format_residuals(params: &FitParams, line: Lineshape, data: &SpectrumDataset) -> Result<String> {
    let mut out = String::from("detuning_ueV,omega_R_ueV,counts,model_counts,residual,normalized_residual\n");
    for (i, s) in data.sweeps.iter().enumerate() {
        let model = fitting::model_counts(params, line, s, i)?;
        for ((nu, c), m) in s.nu.iter().zip(&s.counts).zip(model) {
            let _ = writeln!(out, "{},{},{},{},{},{}", s.delta, nu, c, m, c - m, (c - m) / m.max(1.0).sqrt());
        }
    }
    Ok(out)
}

/// Writes the JSON report and its residual CSV.
pub fn emit_report(result: &FitResult, data: &SpectrumDataset, path: &Path) -> Result<()> {
    let report = FitReport::new(result, data);
    let residuals = format_residuals(&result.params, result.lineshape, data)?;
    let json = serde_json::to_string_pretty(&report)?;
    write_atomic(&residuals_path(path), residuals.as_bytes())?;
    write_atomic(path, format!("{json}\n").as_bytes())
}

/// One probe grid of a simulation design: either explicit offsets or an
/// evenly spaced range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSweep {
    pub detuning: f64,
    #[serde(default)]
    pub omega_r: Option<Vec<f64>>,
    #[serde(default)]
    pub start: Option<f64>,
    #[serde(default)]
    pub stop: Option<f64>,
    #[serde(default)]
    pub n: Option<usize>,
}

impl DesignSweep {
    pub fn grid(&self) -> Result<Vec<f64>> {
        match (&self.omega_r, self.start, self.stop, self.n) {
            (Some(v), None, None, None) => Ok(v.clone()),
            (None, Some(a), Some(b), Some(n)) if n >= 2 && b > a => {
                Ok((0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect())
            }
            _ => Err(Error::Config(format!(
                "sweep at detuning {} needs either omega_r or start < stop with n ≥ 2",
                self.detuning
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    None,
    Poisson,
}

/// Configuration of the `simulate` and `gen` tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub model: ModelKind,
    #[serde(default)]
    pub mechanism: crate::broadening::Mechanism,
    pub params: FitParams,
    pub sweeps: Vec<DesignSweep>,
    #[serde(default)]
    pub noise: NoiseKind,
}

impl SimulationConfig {
    pub fn lineshape(&self) -> Lineshape {
        Lineshape {
            model: self.model,
            mechanism: self.mechanism,
        }
    }

    pub fn design(&self) -> Result<Vec<(f64, Vec<f64>)>> {
        if self.sweeps.is_empty() {
            return Err(Error::Config("design has no sweeps".into()));
        }
        self.sweeps.iter().map(|s| Ok((s.detuning, s.grid()?))).collect()
    }
}

/// Model curves with their constituents, one block per sweep introduced by a
/// `# detuning_ueV=<δ>` comment.
/// With spectral wandering the constituents use the correction evaluated at
/// the centroid of the two peaks, so their sum only approximates
/// `model_counts − background_counts`.
pub fn format_simulation(config: &SimulationConfig) -> Result<String> {
    let line = config.lineshape();
    let fp = &config.params;
    let mut out = format!("{SIMULATION_HEADER}\n");
    for (i, (detuning, grid)) in config.design()?.into_iter().enumerate() {
        let n = grid.len();
        let sweep = Sweep::new(detuning, grid, vec![0.0; n])
            .map_err(|e| Error::Config(format!("sweep {i}: {e}")))?;
        let model = fitting::model_counts(fp, line, &sweep, i)?;
        let delta = detuning - fp.omega_x;
        let p = fp.model_params(line);
        let dec = match line.model {
            ModelKind::M1 => crate::model::decompose_m1(&p, delta)?,
            ModelKind::M2 => crate::broadening::decompose_m2(
                &p,
                &crate::broadening::BroadeningSpec {
                    mechanism: line.mechanism,
                    gamma_big: fp.gamma_big,
                },
                delta,
            )?,
        };
        let _ = writeln!(out, "# detuning_ueV={detuning}");
        for (&nu, m) in sweep.nu.iter().zip(model) {
            let bg = fitting::background(fp.a_c_for(i), fp.b0, fp.kappa, detuning, nu);
            let c = dec.constituents(nu - fp.omega_x).scaled(fp.scale);
            let _ = writeln!(out, "{nu},{m},{bg},{},{},{},{}", c.l_plus, c.l_minus, c.d_plus, c.d_minus);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfSeriesReport {
    pub label: String,
    pub n_points: usize,
    pub n_flagged: usize,
    /// Strings in the layout of the bare-emitter summary table.
    pub table: BTreeMap<String, String>,
    pub analysis: RfAnalysis,
}

impl RfSeriesReport {
    pub fn new(a: RfAnalysis) -> Self {
        let mut table = BTreeMap::new();
        let missing = "---".to_string();
        match &a.three_level {
            Some(t) => {
                table.insert("xi0_nW".into(), parenthetic(t.xi0.value, t.xi0.sigma));
                table.insert(
                    "inv_eps_xi2_uW".into(),
                    t.inv_eps_xi2_uw.map_or("unbounded".into(), |e| parenthetic(e.value, e.sigma)),
                );
            }
            None => {
                table.insert("xi0_nW".into(), missing.clone());
                table.insert("inv_eps_xi2_uW".into(), missing.clone());
            }
        }
        match &a.wandering {
            Some(w) => {
                table.insert("Gamma0_ueV".into(), parenthetic(w.gamma0.value, w.gamma0.sigma));
                table.insert("gamma_sw_ueV".into(), parenthetic(w.gamma_sw.value, w.gamma_sw.sigma));
            }
            None => {
                table.insert("Gamma0_ueV".into(), missing.clone());
                table.insert("gamma_sw_ueV".into(), missing.clone());
            }
        }
        table.insert(
            "gamma_pd_ueV".into(),
            a.gamma_pd.map_or(missing, |v| format!("≈ {v:.1}")),
        );
        RfSeriesReport {
            label: a.label.clone(),
            n_points: a.n_points,
            n_flagged: a.n_flagged,
            table,
            analysis: a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfReport {
    pub series: Vec<RfSeriesReport>,
}

/// Machine-readable error body for the command line.
pub fn error_json(e: &Error) -> String {
    serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } }).to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_rows_one_sweep() {
        let d = parse_dataset("detuning_ueV,omega_R_ueV,counts\n0,1,5\n0,-1,7\n").unwrap();
        assert_eq!(d.sweeps.len(), 1);
        assert_eq!(d.sweeps[0].nu, vec![-1.0, 1.0]);
        assert_eq!(d.sweeps[0].counts, vec![7.0, 5.0]);
    }

    #[test]
    fn grouping_comments_and_meta() {
        let text = "# source=lab\n# a comment\ndetuning_ueV,omega_R_ueV,counts\n5,3,1\n-2,0,2\n# mid\n5,-3,4\n";
        let d = parse_dataset(text).unwrap();
        assert_eq!(d.sweeps.iter().map(|s| s.delta).collect::<Vec<_>>(), vec![-2.0, 5.0]);
        assert_eq!(d.sweeps[1].nu, vec![-3.0, 3.0]);
        assert_eq!(d.meta.get("source").map(String::as_str), Some("lab"));
    }

    #[test]
    fn malformed_field_reports_line() {
        let text = "detuning_ueV,omega_R_ueV,counts\n0,1,1\n0,2,1\n0,3,1\n0,4,1\n0,5,1\n0,six,1\n";
        match parse_dataset(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("{other:?}"),
        }
        match parse_dataset("# c\ndetuning_ueV,omega_R_ueV,counts\n0,1,1\n0,1,2\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_dataset("wrong,header,here\n0,1,1\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_dataset("detuning_ueV,omega_R_ueV,counts\n"), Err(Error::EmptyDataset)));
        assert!(matches!(parse_dataset(""), Err(Error::Parse { .. }) | Err(Error::EmptyDataset)));
    }

    #[test]
    fn round_trip_is_lossless() {
        let sweeps = vec![
            Sweep::new(-17.3, vec![-1.0 / 3.0, 1e-300, 0.1 + 0.2, 12345.678901234567], vec![0.0, 1.5e9, 3.0, 1.0 / 7.0]).unwrap(),
            Sweep::new(std::f64::consts::PI, vec![-2.5], vec![42.0]).unwrap(),
        ];
        let mut meta = BTreeMap::new();
        meta.insert("seed".into(), "9".into());
        let d = SpectrumDataset { sweeps, meta };
        let back = parse_dataset(&format_dataset(&d)).unwrap();
        let mut sorted = d.clone();
        sorted.sweeps.sort_by(|a, b| a.delta.total_cmp(&b.delta));
        assert_eq!(back, sorted);
    }

    #[test]
    fn rf_series_parsing() {
        let text = "power_nW,intensity_counts,linewidth_ueV,flag\n0.5,100,3.9,1\n1,180,4.0,0\n2,300,4.2\n";
        let s = parse_rf_series(text, "qd1").unwrap();
        assert_eq!(s.points.len(), 3);
        assert!(s.points[0].discard && !s.points[1].discard && !s.points[2].discard);
        let back = parse_rf_series(&format_rf_series(&s), "qd1").unwrap();
        assert_eq!(back, s);
        let plain = parse_rf_series("power_nW,intensity_counts,linewidth_ueV\n1,2,3\n", "x").unwrap();
        assert!(!plain.points[0].discard);
        assert!(matches!(
            parse_rf_series("power_nW,intensity_counts,linewidth_ueV\n1,2,-3\n", "x"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_rf_series("power_nW,intensity_counts,linewidth_ueV,flag\n1,2,3,maybe\n", "x"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn parenthetic_format() {
        assert_eq!(parenthetic(11.051, 0.021), "11.05(2)");
        assert_eq!(parenthetic(11.05, 0.0), "11.05");
        assert_eq!(parenthetic(2.28, 0.04), "2.28(4)");
        assert_eq!(parenthetic(19.48, 0.09), "19.48(9)");
        assert_eq!(parenthetic(1.26, 0.05), "1.26(5)");
        assert_eq!(parenthetic(3.84, 0.04), "3.84(4)");
        assert_eq!(parenthetic(7.0, 0.5), "7.0(5)");
        assert_eq!(parenthetic(0.111, 0.009), "0.111(9)");
        assert_eq!(parenthetic(1.0, 0.096), "1.0(1)");
        assert_eq!(parenthetic(1234.0, 56.0), "1230(60)");
    }

    #[test]
    fn m1_summary_column() {
        // uncertainties as they would come out of a fit, before rounding
        let c = crate::model::cooperativity(11.05, 19.48, 2.28).unwrap();
        assert_eq!(parenthetic(11.05, 0.021), "11.05(2)");
        assert_eq!(parenthetic(19.48, 0.088), "19.48(9)");
        assert_eq!(parenthetic(2.28, 0.041), "2.28(4)");
        assert_eq!(parenthetic(6.15e6 / 1e6, 0.04e6 / 1e6), "6.15(4)");
        assert_eq!(parenthetic(c, 0.1), "5.5(1)");
        let c2 = crate::model::cooperativity(11.13, 19.84, 1.38).unwrap();
        assert_eq!(parenthetic(c2, 0.3), "9.0(3)");
    }

    #[test]
    fn atomic_write_replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.txt");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "second");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
        let missing = dir.path().join("nope").join("out.txt");
        assert!(write_atomic(&missing, b"x").is_err());
        assert!(!missing.exists());
    }

    #[test]
    fn residual_path_naming() {
        assert_eq!(residuals_path(Path::new("/tmp/a/fit.json")), PathBuf::from("/tmp/a/fit_residuals.csv"));
    }

    #[test]
    fn error_body_has_kind() {
        let body = error_json(&Error::EmptyDataset);
        let v: serde_json::Value = serde_json::from_str(&body).unwrap();
        assert_eq!(v["error"]["kind"], "EmptyDataset");
    }
}
