//! Command-line tasks.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::fitting::{self, FitConfig, Noise};
use crate::io::{self, NoiseKind, RfReport, RfSeriesReport, SimulationConfig};
use crate::oracle::check::{run_checks, summarize, CheckOptions};
use crate::rf;

#[derive(Debug, Parser)]
#[command(name = "polariton", version, about = "Cavity-emitter lineshape simulation, fitting and oracle checks")]
pub struct Cli {
    /// Print progress to stderr; repeat for more detail.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub task: Task,
}

#[derive(Debug, Subcommand)]
pub enum Task {
    /// Model curves and their lineshape constituents for a parameter set.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Global fit of a dataset; writes a JSON report and a residual CSV.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Synthetic dataset from a simulation config.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Randomized comparison of every closed form against its oracle.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Multiplier applied to every nominal tolerance.
        #[arg(long, default_value_t = 1.0)]
        tol: f64,
        #[arg(long, default_value_t = 20)]
        sets: usize,
    },
    /// Saturation, three-level and spectral-wandering analysis of
    /// resonance-fluorescence power series, one file per emitter.
    RfFit {
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        #[arg(long)]
        report: PathBuf,
        /// Studentized-residual threshold for flagging low-power points.
        #[arg(long, default_value_t = 3.0)]
        outlier_threshold: f64,
    },
}

fn require(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("input file {} does not exist", path.display())))
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    require(path)?;
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Runs one task and returns the process exit status.
pub fn run(cli: &Cli) -> Result<i32> {
    let verbose = cli.verbose > 0;
    match &cli.task {
        Task::Simulate { config, out } => {
            let cfg: SimulationConfig = read_json(config)?;
            io::write_atomic(out, io::format_simulation(&cfg)?.as_bytes())?;
            Ok(0)
        }
        Task::Gen { config, seed, out } => {
            let cfg: SimulationConfig = read_json(config)?;
            let noise = match cfg.noise {
                NoiseKind::None => Noise::None,
                NoiseKind::Poisson => Noise::Poisson { seed: *seed },
            };
            let data = fitting::generate_synthetic(&cfg.params, cfg.lineshape(), &cfg.design()?, noise)?;
            io::save_dataset(&data, out)?;
            Ok(0)
        }
        Task::Fit { data, config, report } => {
            require(data)?;
            let cfg: FitConfig = read_json(config)?;
            let dataset = io::load_dataset(data)?;
            let result = fitting::fit_global(&dataset, &cfg)?;
            io::emit_report(&result, &dataset, report)?;
            if verbose {
                let t = io::summary_table(&result);
                eprintln!(
                    "g={} kappa={} gamma={} C={} chi2/dof={:.4}",
                    t.g,
                    t.kappa,
                    t.gamma,
                    t.cooperativity,
                    result.reduced_chi2()
                );
            }
            Ok(0)
        }
        Task::Check { seed, tol, sets } => {
            let opts = CheckOptions {
                seed: *seed,
                n_sets: *sets,
                tol_scale: *tol,
                lindblad: true,
            };
            let summary = summarize(&run_checks(&opts)?);
            println!("{:<30} {:>5} {:>12} {:>12}  result", "check", "runs", "max_dev", "tolerance");
            for s in &summary {
                println!(
                    "{:<30} {:>5} {:>12.3e} {:>12.3e}  {}",
                    s.name,
                    s.runs,
                    s.max_measured,
                    s.tolerance,
                    if s.pass { "PASS" } else { "FAIL" }
                );
            }
            Ok(if summary.iter().all(|s| s.pass) { 0 } else { 1 })
        }
        Task::RfFit {
            data,
            report,
            outlier_threshold,
        } => {
            let mut series = Vec::with_capacity(data.len());
            for path in data {
                require(path)?;
                let s = io::load_rf_series(path)?;
                let analysis = rf::analyze_series(&s, *outlier_threshold);
                if verbose {
                    eprintln!("{}: {} points, {} flagged", analysis.label, analysis.n_points, analysis.n_flagged);
                }
                series.push(RfSeriesReport::new(analysis));
            }
            let json = serde_json::to_string_pretty(&RfReport { series })?;
            io::write_atomic(report, format!("{json}\n").as_bytes())?;
            Ok(0)
        }
    }
}
