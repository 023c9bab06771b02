//! Error types shared across the crate.

use std::fmt;

use thiserror::Error;

/// A single violated precondition found by [`crate::datamodel::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    MissingIntercept,
    NonFiniteData { field: &'static str, index: usize },
    QuantileOutOfRange { tau: f64 },
    DuplicateQuantile { tau: f64 },
    UnorderedQuantiles,
    NoQuantiles,
    SampleTooSmall { n: usize, p: usize },
    DimensionMismatch { field: &'static str, expected: usize, found: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingIntercept => {
                write!(f, "MissingIntercept: first nuisance column must be all ones")
            }
            Violation::NonFiniteData { field, index } => {
                write!(f, "NonFiniteData: non-finite value in {field} at index {index}")
            }
            Violation::QuantileOutOfRange { tau } => {
                write!(f, "QuantileOutOfRange: tau = {tau} is not in (0, 1)")
            }
            Violation::DuplicateQuantile { tau } => {
                write!(f, "DuplicateQuantile: tau = {tau} appears more than once")
            }
            Violation::UnorderedQuantiles => {
                write!(f, "UnorderedQuantiles: quantile levels must be strictly increasing")
            }
            Violation::NoQuantiles => write!(f, "NoQuantiles: at least one quantile level is required"),
            Violation::SampleTooSmall { n, p } => {
                write!(f, "SampleTooSmall: n = {n} but at least p + 2 = {} rows are required", p + 2)
            }
            Violation::DimensionMismatch { field, expected, found } => {
                write!(f, "DimensionMismatch: {field} has length {found}, expected {expected}")
            }
        }
    }
}

/// Every violated invariant found while validating a dataset/spec pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join("; "))
    }
}

impl std::error::Error for ValidationReport {}

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation failed: {0}")]
    Validation(#[from] ValidationReport),

    #[error("degenerate linear program: {0}")]
    Degenerate(String),

    #[error("simplex did not converge within {0} pivots")]
    NotConverged(usize),

    #[error("bandwidth infeasible at tau = {tau}")]
    BandwidthInfeasible { tau: f64 },

    #[error("singular projection: {0}")]
    SingularProjection(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("covariance matrix A is singular")]
    SingularA,

    #[error("Wald covariance matrix is singular")]
    SingularCovariance,

    #[error("quadrature failed: {0}")]
    QuadratureFailure(String),

    #[error("closed testing supports at most {max} hypotheses, got {found}")]
    TooManyHypotheses { found: usize, max: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// True for failures caused by the inputs rather than the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_) | Error::DimensionMismatch(_) | Error::InvalidArgument(_) | Error::TooManyHypotheses { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
