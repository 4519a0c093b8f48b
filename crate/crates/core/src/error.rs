use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// The two complex Rabi poles coincide and the partial-fraction
    /// decomposition is undefined.
    #[error("exceptional point: |g^2 + z^2| = {radicand:.3e} is below tolerance {tolerance:.3e}")]
    ExceptionalPoint { radicand: f64, tolerance: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("Fock truncation not converged: doubling n_max from {n_max} changed populations by {change:.3e} (rtol {rtol:.1e})")]
    TruncationNotConverged { n_max: usize, change: f64, rtol: f64 },

    #[error("integration did not reach a steady state: {0}")]
    NonConvergedIntegration(String),

    #[error("quadrature window too narrow: tail estimate {tail:.3e} exceeds tolerance {tol:.3e}")]
    WindowTooNarrow { tail: f64, tol: f64 },

    #[error("optimizer did not converge after {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("singular Jacobian: {0}")]
    SingularJacobian(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("inconsistent fit: {0}")]
    InconsistentFit(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable name, used in CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ExceptionalPoint { .. } => "ExceptionalPoint",
            Error::Domain(_) => "DomainError",
            Error::SingularSystem(_) => "SingularSystem",
            Error::TruncationNotConverged { .. } => "TruncationNotConverged",
            Error::NonConvergedIntegration(_) => "NonConvergedIntegration",
            Error::WindowTooNarrow { .. } => "WindowTooNarrow",
            Error::NotConverged { .. } => "NotConverged",
            Error::SingularJacobian(_) => "SingularJacobian",
            Error::InsufficientData(_) => "InsufficientData",
            Error::InconsistentFit(_) => "InconsistentFit",
            Error::Parse { .. } => "ParseError",
            Error::EmptyDataset => "EmptyDataset",
            Error::Config(_) => "ConfigError",
            Error::Io(_) => "IoError",
            Error::Json(_) => "JsonError",
        }
    }
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
