//! Lineshape theory, brute-force oracles and global fitting for the
//! resonant-laser spectra of a quantum dot strongly coupled to a tunable
//! microcavity.
//!
//! * [`model`]: closed-form weak-excitation steady state (model M1).
//! * [`broadening`]: pure dephasing and spectral wandering corrections (model M2).
//! * [`oracle`]: independent numerical verifiers.
//! * [`fitting`]: global χ² fits across detuning sweeps, synthetic data.
//! * [`rf`]: bare-emitter resonance-fluorescence saturation analysis.
//! * [`io`]: file formats and reports.
//! * [`cli`]: command-line tasks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod broadening;
pub mod cli;
pub mod error;
pub mod fitting;
pub mod io;
pub mod model;
pub mod oracle;
pub mod rf;
pub mod units;

pub use error::{Error, Result};
pub use model::{ComplexPole, ModelParams, PoleDecomposition, TuningPoint};
