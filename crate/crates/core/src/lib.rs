//! Simultaneous quantile-regression inference across several quantile
//! levels.
//!
//! The crate fits quantile regressions by linear programming, builds the
//! multivariate regression rank-score test and its weighted generalization,
//! and combines the resulting local tests in a closed-testing procedure with
//! strong familywise error control. A Monte Carlo harness evaluates size and
//! power on the standard simulation designs.

pub mod cli;
pub mod datamodel;
pub mod distributions;
pub mod error;
pub mod linalg;
pub mod multiplicity;
pub mod qrsolver;
pub mod rankscore;
pub mod simulation;

pub use datamodel::{validate, Dataset, HypothesisSubset, Problem, QuantileSpec};
pub use error::{Error, Result, ValidationReport, Violation};
