use std::fmt;

/// Errors produced by the estimation toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("sample is empty")]
    EmptySample,
    #[error("observation {0} is not a positive finite number")]
    NonPositive(f64),
    #[error("tied observations at {0}; enable de-tie mode to perturb duplicates")]
    Ties(f64),
    #[error("{what} = {value} is outside the domain")]
    Domain { what: &'static str, value: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("hazard cannot be sampled: {0}")]
    NotSamplable(String),
    #[error("criterion is not finite for this hazard and sample")]
    NonFiniteCriterion,
    #[error("solver stopped after {} outer iterations without meeting tolerances", .0.iterations)]
    NotConverged(Box<crate::solver::FitResult>),
    #[error("envelope solver failed: {reason}")]
    EnvelopeFailed {
        reason: String,
        last: Box<crate::envelope::EnvelopeFit>,
    },
    #[error("too many failed replications: {failed} of {total}")]
    FailureBudget { failed: usize, total: usize },
    #[error("ill-posed: {0}")]
    IllPosed(String),
    #[error("quantile level {0} is not present in the table")]
    MissingLevel(f64),
    #[error("root finder could not bracket: {0}")]
    Bracket(String),
    #[error("adaptive quadrature did not reach tolerance {0}")]
    Quadrature(f64),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(what: &'static str, value: f64) -> Error {
    Error::Domain { what, value }
}

pub(crate) fn invalid(msg: impl fmt::Display) -> Error {
    Error::InvalidParameter(msg.to_string())
}
