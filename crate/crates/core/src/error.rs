use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("singular kernel evaluated at coincident points without softening")]
    DegenerateKernel,

    #[error("invalid exponents for the interpolation constant: m={m}, r={r}, s={s}")]
    InvalidExponents { m: u32, r: f64, s: f64 },

    #[error("ensemble has no particles")]
    EmptyEnsemble,

    #[error("invalid particle {index}: {reason}")]
    InvalidParticle { index: usize, reason: String },

    #[error("vector potential fixed point did not converge: residual {residual:e} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },

    #[error("fixed-point iterate {iteration} left the a-priori ball: sup|A| = {sup} > {cbar}")]
    BoundViolated {
        iteration: usize,
        sup: f64,
        cbar: f64,
    },

    #[error("field solve failed at t = {time}: {source}")]
    StepFailed {
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("quadrature too coarse: relative discrepancy {discrepancy:e} exceeds {limit}")]
    QuadratureTooCoarse { discrepancy: f64, limit: f64 },

    #[error("ensembles differ in size: {left} vs {right}")]
    SizeMismatch { left: usize, right: usize },

    #[error("ensembles do not carry equal uniform weights")]
    WeightMismatch,

    #[error("interpolation parameter {0} outside [1, 2]")]
    ThetaOutOfRange(f64),

    #[error("trajectories do not share particle labels and weights")]
    LabelMismatch,

    #[error("regime violated: separation {separation} exceeds e^-1")]
    RegimeViolated { separation: f64 },

    #[error("Q vanished at sample {index}")]
    NonPositiveQ { index: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        Error::Io {
            path: path.into(),
            message: err.to_string(),
        }
    }

    /// Walks through `StepFailed` wrappers to the underlying cause.
    pub fn root(&self) -> &Error {
        match self {
            Error::StepFailed { source, .. } => source.root(),
            other => other,
        }
    }
}
