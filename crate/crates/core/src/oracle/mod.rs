//! Independent brute-force verifiers for the closed forms.
//!
//! * [`bloch`]: linear and second-moment Bloch steady states.
//! * [`check`]: randomized sweep pairing closed forms with the oracles.
//! * [`lindblad`]: truncated-Fock master-equation steady state.
//! * [`convolve`]: Lorentzian convolution by quadrature.
//! * [`rf_ode`]: time-integrated two-level resonance fluorescence.
//! * [`ode`]: the adaptive integrator used by the time-domain oracles.

pub mod bloch;
pub mod check;
pub mod convolve;
pub mod lindblad;
pub mod ode;
pub mod rf_ode;

pub use bloch::{bloch_full_steady, bloch_linear_steady, Moments};
pub use convolve::{convolve_m1_over_exciton, convolve_numeric, QuadratureOptions};
pub use lindblad::{lindblad_steady, LindbladConfig, LindbladSteady, SteadyMethod};
pub use rf_ode::rf_steady_ode;
