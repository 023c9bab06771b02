//! Observed data, quantile levels and the hypothesis family.
//!
//! A [`Dataset`] holds a response `y`, a single target covariate `x` and a
//! nuisance design `Z` whose first column is the intercept. A
//! [`QuantileSpec`] holds the levels `tau_1 < ... < tau_K` together with the
//! null value of the target coefficient at each level. Only finite-sample
//! preconditions are checked here; asymptotic regularity conditions on the
//! design cannot be verified from data.

use std::fmt;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{ValidationReport, Violation};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    /// n x p nuisance design; column 0 must be exactly 1.0 in every row.
    pub z: DMatrix<f64>,
}

impl Dataset {
    pub fn new(y: Vec<f64>, x: Vec<f64>, z: DMatrix<f64>) -> Self {
        Dataset { y, x, z }
    }

    /// Builds the nuisance design by prepending an intercept to `columns`.
    pub fn with_intercept(y: Vec<f64>, x: Vec<f64>, columns: &[Vec<f64>]) -> Self {
        let n = y.len();
        let p = columns.len() + 1;
        let z = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { columns[j - 1].get(i).copied().unwrap_or(f64::NAN) });
        Dataset { y, x, z }
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.z.ncols()
    }

    /// Full design `[Z | x]` with the target covariate as the last column.
    pub fn full_design(&self) -> DMatrix<f64> {
        let n = self.n();
        let p = self.p();
        DMatrix::from_fn(n, p + 1, |i, j| if j < p { self.z[(i, j)] } else { self.x[i] })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantileSpec {
    pub taus: Vec<f64>,
    pub null_values: Vec<f64>,
}

impl QuantileSpec {
    /// Levels with all null values set to zero.
    pub fn new(taus: Vec<f64>) -> Self {
        let k = taus.len();
        QuantileSpec { taus, null_values: vec![0.0; k] }
    }

    pub fn with_null_values(taus: Vec<f64>, null_values: Vec<f64>) -> Self {
        QuantileSpec { taus, null_values }
    }

    pub fn k(&self) -> usize {
        self.taus.len()
    }
}

/// A nonempty subset `C` of the hypothesis indices, stored 0-based in
/// ascending order. Displayed 1-based, e.g. `{1,3}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HypothesisSubset {
    indices: Vec<usize>,
}

impl HypothesisSubset {
    /// Accepts 0-based indices in any order; rejects empty, duplicate and
    /// out-of-range input.
    pub fn new(mut indices: Vec<usize>, k: usize) -> Option<Self> {
        if indices.is_empty() {
            return None;
        }
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) || *indices.last().unwrap() >= k {
            return None;
        }
        Some(HypothesisSubset { indices })
    }

    /// Subset encoded by the set bits of `mask` (bit j is hypothesis j).
    pub fn from_mask(mask: u32) -> Option<Self> {
        if mask == 0 {
            return None;
        }
        let indices = (0..32).filter(|j| mask & (1 << j) != 0).collect();
        Some(HypothesisSubset { indices })
    }

    pub fn full(k: usize) -> Self {
        HypothesisSubset { indices: (0..k).collect() }
    }

    pub fn singleton(j: usize) -> Self {
        HypothesisSubset { indices: vec![j] }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn mask(&self) -> u32 {
        self.indices.iter().fold(0u32, |m, &j| m | (1 << j))
    }

    pub fn contains(&self, j: usize) -> bool {
        self.indices.binary_search(&j).is_ok()
    }

    /// 1-based label, e.g. `{1,2,5}`.
    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for HypothesisSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.indices.iter().map(|j| (j + 1).to_string()).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

impl Serialize for HypothesisSubset {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let one_based: Vec<usize> = self.indices.iter().map(|j| j + 1).collect();
        one_based.serialize(s)
    }
}

/// A dataset/spec pair that passed [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    dataset: Dataset,
    spec: QuantileSpec,
}

impl Problem {
    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn spec(&self) -> &QuantileSpec {
        &self.spec
    }

    pub fn into_parts(self) -> (Dataset, QuantileSpec) {
        (self.dataset, self.spec)
    }
}

/// Checks every finite-sample precondition and reports all violations at once.
pub fn validate(dataset: Dataset, spec: QuantileSpec) -> Result<Problem, ValidationReport> {
    let mut violations = Vec::new();
    let n = dataset.y.len();
    let p = dataset.z.ncols();

    if dataset.x.len() != n {
        violations.push(Violation::DimensionMismatch { field: "x", expected: n, found: dataset.x.len() });
    }
    if dataset.z.nrows() != n {
        violations.push(Violation::DimensionMismatch { field: "Z rows", expected: n, found: dataset.z.nrows() });
    }
    if p == 0 || n < p + 2 {
        violations.push(Violation::SampleTooSmall { n, p });
    }
    if let Some(i) = dataset.y.iter().position(|v| !v.is_finite()) {
        violations.push(Violation::NonFiniteData { field: "y", index: i });
    }
    if let Some(i) = dataset.x.iter().position(|v| !v.is_finite()) {
        violations.push(Violation::NonFiniteData { field: "x", index: i });
    }
    if let Some(i) = dataset.z.iter().position(|v| !v.is_finite()) {
        violations.push(Violation::NonFiniteData { field: "Z", index: i });
    }
    if p == 0 || dataset.z.column(0).iter().any(|&v| v != 1.0) {
        violations.push(Violation::MissingIntercept);
    }

    if spec.taus.is_empty() {
        violations.push(Violation::NoQuantiles);
    }
    for &tau in &spec.taus {
        if !(tau > 0.0 && tau < 1.0) {
            violations.push(Violation::QuantileOutOfRange { tau });
        }
    }
    let mut duplicate = false;
    for (i, &a) in spec.taus.iter().enumerate() {
        if spec.taus[..i].contains(&a) && !duplicate {
            violations.push(Violation::DuplicateQuantile { tau: a });
            duplicate = true;
        }
    }
    if !duplicate && spec.taus.windows(2).any(|w| w[0] >= w[1]) {
        violations.push(Violation::UnorderedQuantiles);
    }
    if spec.null_values.len() != spec.taus.len() {
        violations.push(Violation::DimensionMismatch {
            field: "null_values",
            expected: spec.taus.len(),
            found: spec.null_values.len(),
        });
    }
    if let Some(i) = spec.null_values.iter().position(|v| !v.is_finite()) {
        violations.push(Violation::NonFiniteData { field: "null_values", index: i });
    }

    if violations.is_empty() {
        Ok(Problem { dataset, spec })
    } else {
        Err(ValidationReport { violations })
    }
}
