use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("time {t} outside [0, {horizon}]")]
    Domain { t: f64, horizon: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("invalid time warp: {0}")]
    InvalidWarp(String),

    #[error("unsupported input: {0}")]
    Unsupported(String),

    #[error("coefficient is not cadlag at t = {t}: left limit did not stabilise (spread {spread:e})")]
    NotCadlag { t: f64, spread: f64 },

    #[error("invalid coefficient: {0}")]
    InvalidCoefficient(String),

    #[error("coefficient violates assumptions: {0}")]
    AssumptionViolated(String),

    #[error("invalid driver specification: {0}")]
    InvalidSpec(String),

    #[error("decomposition unavailable: {0}")]
    DecompositionUnavailable(String),

    #[error("reference integrator does not support this coefficient: {0}")]
    OracleUnsupported(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error(
        "malliavin derivative flagged: base converged = {base_converged}, shifted converged = {shifted_converged}"
    )]
    FlaggedDerivative {
        base_converged: bool,
        shifted_converged: bool,
        derivative: Box<crate::malliavin::MalliavinDerivative>,
    },

    #[error("csv: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}
