//! Regression rank-score statistics for the target coefficient across
//! several quantile levels.
//!
//! For each level the null model `y - x beta_0(tau)` is fitted on `Z`
//! alone. The rank-scores `b = a - (1 - tau)` are paired with the residual
//! `D = x - X_hat` of a density-weighted projection of `x` on `Z`, giving the
//! score vector `S_j = n^{-1/2} D(tau_j)' b(tau_j)`. Its null covariance is
//! `A = V_n Delta`, where `Delta[l, r] = min(tau_l, tau_r) - tau_l tau_r`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{Continuous, ContinuousCDF, Normal, StudentsT};

use crate::datamodel::{HypothesisSubset, Problem};
use crate::distributions::{
    chisq_noncentral_upper, chisq_upper, chisq_upper_quantile, imhof_upper, mixture_quantile,
    WeightedChiSquareMixture,
};
use crate::error::{Error, Result};
use crate::linalg::{is_symmetric, principal_submatrix, sorted_eigen, subvector, sym_sqrt_pair, symmetrize};
use crate::qrsolver::{self, QuantileFit};

/// Guard in the difference-quotient denominator.
pub const SPARSITY_EPS: f64 = 1e-8;
/// Lower bound on the estimated densities.
pub const DENSITY_FLOOR: f64 = 0.01;
/// Relative spread below which mixture weights are treated as equal and the
/// reference distribution is an exact scaled chi-square.
const EQUAL_WEIGHT_TOL: f64 = 1e-9;

/// Hall-Sheather bandwidth at level `tau` for `n` observations (alpha = 0.05).
pub fn hall_sheather_bandwidth(n: usize, tau: f64) -> f64 {
    let std = Normal::new(0.0, 1.0).unwrap();
    let z_alpha = std.inverse_cdf(0.975);
    let q = std.inverse_cdf(tau);
    let phi = std.pdf(q);
    (n as f64).powf(-1.0 / 3.0) * z_alpha.powf(2.0 / 3.0) * (1.5 * phi * phi / (2.0 * q * q + 1.0)).powf(1.0 / 3.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SparsityEstimates {
    pub tau: f64,
    pub bandwidth: f64,
    /// The raw bandwidth left `(0, 1)` and was shrunk to `0.9 min(tau, 1 - tau)`.
    pub clipped: bool,
    /// Truncated density estimates, each at least [`DENSITY_FLOOR`].
    pub f_hat: Vec<f64>,
    pub gamma_lo: Vec<f64>,
    pub gamma_hi: Vec<f64>,
}

/// Difference-quotient density estimates at each observation,
/// `max(0.01, 2 h / (z_i' (gamma(tau + h) - gamma(tau - h)) - eps))`.
pub fn estimate_sparsity(z: &DMatrix<f64>, y: &[f64], tau: f64) -> Result<SparsityEstimates> {
    let n = z.nrows();
    let mut bandwidth = hall_sheather_bandwidth(n, tau);
    let mut clipped = false;
    if !(tau - bandwidth > 0.0 && tau + bandwidth < 1.0) {
        bandwidth = 0.9 * tau.min(1.0 - tau);
        clipped = true;
    }
    if !(bandwidth > 1e-6) || !bandwidth.is_finite() {
        return Err(Error::BandwidthInfeasible { tau });
    }
    let lo = qrsolver::fit(z, y, tau - bandwidth)?;
    let hi = qrsolver::fit(z, y, tau + bandwidth)?;
    let f_hat = (0..n)
        .map(|i| {
            let spread: f64 = (0..z.ncols()).map(|j| z[(i, j)] * (hi.gamma_hat[j] - lo.gamma_hat[j])).sum();
            let denom = spread - SPARSITY_EPS;
            if denom > 0.0 {
                (2.0 * bandwidth / denom).max(DENSITY_FLOOR)
            } else {
                DENSITY_FLOOR
            }
        })
        .collect();
    Ok(SparsityEstimates { tau, bandwidth, clipped, f_hat, gamma_lo: lo.gamma_hat, gamma_hi: hi.gamma_hat })
}

/// Residual `D = x - Z (Z' W Z)^{-1} Z' W x` of the projection weighted by
/// `W = diag(f_hat)`, and `V_n = D'D / n`.
pub fn weighted_projection(z: &DMatrix<f64>, x: &[f64], f_hat: &[f64]) -> Result<(Vec<f64>, f64)> {
    let n = z.nrows();
    if x.len() != n || f_hat.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "projection needs {n} entries, got x {} and weights {}",
            x.len(),
            f_hat.len()
        )));
    }
    if f_hat.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(Error::SingularProjection("weights must be finite and positive".into()));
    }
    let root: Vec<f64> = f_hat.iter().map(|w| w.sqrt()).collect();
    let zw = DMatrix::from_fn(n, z.ncols(), |i, j| root[i] * z[(i, j)]);
    let xw = DVector::from_iterator(n, (0..n).map(|i| root[i] * x[i]));
    let qr = zw.qr();
    let r = qr.r();
    let scale = r.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(scale > 0.0) || r.diagonal().iter().any(|v| v.abs() <= 1e-10 * scale) {
        return Err(Error::SingularProjection("Z' W Z is not invertible".into()));
    }
    let qtx = qr.q().transpose() * &xw;
    let coef = r
        .solve_upper_triangular(&qtx)
        .ok_or_else(|| Error::SingularProjection("triangular solve failed".into()))?;
    let fitted = z * coef;
    let d: Vec<f64> = (0..n).map(|i| x[i] - fitted[i]).collect();
    let vn = d.iter().map(|v| v * v).sum::<f64>() / n as f64;
    Ok((d, vn))
}

/// `Delta[l, r] = min(tau_l, tau_r) - tau_l tau_r`.
pub fn delta_matrix(taus: &[f64]) -> DMatrix<f64> {
    let k = taus.len();
    DMatrix::from_fn(k, k, |l, r| taus[l].min(taus[r]) - taus[l] * taus[r])
}

/// Projection residual at one level.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileProjection {
    pub d: Vec<f64>,
    pub vn: f64,
}

/// Everything the subset statistics need, computed once per dataset.
#[derive(Debug, Clone)]
pub struct RankScoreState {
    pub n: usize,
    pub taus: Vec<f64>,
    pub s: Vec<f64>,
    /// Mean of the per-level projection variances.
    pub vn: f64,
    pub delta: DMatrix<f64>,
    pub projections: Vec<QuantileProjection>,
    pub fits: Vec<QuantileFit>,
    pub sparsity: Vec<SparsityEstimates>,
}

impl RankScoreState {
    pub fn k(&self) -> usize {
        self.taus.len()
    }

    /// `A = V_n Delta`.
    pub fn a_matrix(&self) -> DMatrix<f64> {
        &self.delta * self.vn
    }

    pub fn a_subset(&self, subset: &HypothesisSubset) -> DMatrix<f64> {
        principal_submatrix(&self.delta, subset.indices()) * self.vn
    }

    pub fn s_subset(&self, subset: &HypothesisSubset) -> DVector<f64> {
        subvector(&self.s, subset.indices())
    }

    /// Largest dual-feasibility residual over the null-model fits.
    pub fn max_dual_residual(&self, z: &DMatrix<f64>) -> f64 {
        self.fits.iter().map(|f| f.dual_residual(z)).fold(0.0, f64::max)
    }

    fn check_subset(&self, subset: &HypothesisSubset) -> Result<()> {
        match subset.indices().last() {
            Some(&j) if j < self.k() => Ok(()),
            _ => Err(Error::InvalidArgument(format!("subset {subset} does not fit K = {}", self.k()))),
        }
    }

    fn check_vn(&self) -> Result<()> {
        if self.vn <= 1e-12 {
            Err(Error::SingularProjection(format!("V_n = {:.3e}: x is (nearly) in the span of Z", self.vn)))
        } else {
            Ok(())
        }
    }
}

/// Fits the null model at every level and assembles the score vector.
pub fn score_state(problem: &Problem) -> Result<RankScoreState> {
    let data = problem.dataset();
    let spec = problem.spec();
    let n = data.n();
    let per_level: Vec<(QuantileFit, SparsityEstimates, QuantileProjection, f64)> = spec
        .taus
        .par_iter()
        .zip(spec.null_values.par_iter())
        .map(|(&tau, &beta0)| {
            let y_adj: Vec<f64> = data.y.iter().zip(&data.x).map(|(y, x)| y - x * beta0).collect();
            let fit = qrsolver::fit(&data.z, &y_adj, tau)?;
            let sparsity = estimate_sparsity(&data.z, &y_adj, tau)?;
            let (d, vn) = weighted_projection(&data.z, &data.x, &sparsity.f_hat)?;
            let b = qrsolver::rank_score_function(&fit);
            let s = d.iter().zip(&b).map(|(d, b)| d * b).sum::<f64>() / (n as f64).sqrt();
            Ok((fit, sparsity, QuantileProjection { d, vn }, s))
        })
        .collect::<Result<_>>()?;

    let k = per_level.len();
    let mut fits = Vec::with_capacity(k);
    let mut sparsity = Vec::with_capacity(k);
    let mut projections = Vec::with_capacity(k);
    let mut s = Vec::with_capacity(k);
    for (f, sp, pr, sj) in per_level {
        fits.push(f);
        sparsity.push(sp);
        projections.push(pr);
        s.push(sj);
    }
    let vn = projections.iter().map(|p| p.vn).sum::<f64>() / k as f64;
    Ok(RankScoreState { n, taus: spec.taus.clone(), s, vn, delta: delta_matrix(&spec.taus), projections, fits, sparsity })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Reference {
    ChiSquare { df: usize },
    WeightedChiSquare { weights: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestOutcome {
    pub statistic: f64,
    pub reference: Reference,
    pub p_value: f64,
    pub subset: HypothesisSubset,
}

/// `T = S_C' (V_n Delta_C)^{-1} S_C` against chi-square with `|C|` degrees of freedom.
pub fn statistic_standard(state: &RankScoreState, subset: &HypothesisSubset) -> Result<TestOutcome> {
    state.check_subset(subset)?;
    state.check_vn()?;
    let a = state.a_subset(subset);
    let s = state.s_subset(subset);
    let chol = a.cholesky().ok_or(Error::SingularA)?;
    let statistic = s.dot(&chol.solve(&s)).max(0.0);
    let k = subset.len();
    Ok(TestOutcome {
        statistic,
        reference: Reference::ChiSquare { df: k },
        p_value: chisq_upper(statistic, k),
        subset: subset.clone(),
    })
}

/// Assumed error law for the density-reciprocal preset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ErrorFamily {
    Normal,
    StudentT { df: f64 },
}

impl ErrorFamily {
    /// `f(F^{-1}(tau))` of the standardized law.
    pub fn density_at_quantile(&self, tau: f64) -> f64 {
        match *self {
            ErrorFamily::Normal => {
                let d = Normal::new(0.0, 1.0).unwrap();
                d.pdf(d.inverse_cdf(tau))
            }
            ErrorFamily::StudentT { df } => {
                let d = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
                d.pdf(d.inverse_cdf(tau))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightingKind {
    /// `B = A^{-1}`: recovers the standard chi-square statistic.
    InverseA,
    Identity,
    /// `B = diag(Delta)^{-1}`.
    InverseDiagDelta,
    /// `B = diag(1 / f(F^{-1}(tau_j))^2)` under an assumed error family.
    DensityReciprocal(ErrorFamily),
    Custom(DMatrix<f64>),
}

impl WeightingKind {
    pub fn name(&self) -> String {
        match self {
            WeightingKind::InverseA => "inverse".into(),
            WeightingKind::Identity => "identity".into(),
            WeightingKind::InverseDiagDelta => "diag-delta".into(),
            WeightingKind::DensityReciprocal(ErrorFamily::Normal) => "density:normal".into(),
            WeightingKind::DensityReciprocal(ErrorFamily::StudentT { df }) => format!("density:t{df}"),
            WeightingKind::Custom(_) => "custom".into(),
        }
    }
}

impl std::str::FromStr for WeightingKind {
    type Err = Error;

    /// `identity`, `inverse`, `diag-delta`, `density:normal`, `density:t<df>`
    /// or `custom:<path>` (whitespace-separated square matrix).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "identity" => return Ok(WeightingKind::Identity),
            "inverse" => return Ok(WeightingKind::InverseA),
            "diag-delta" => return Ok(WeightingKind::InverseDiagDelta),
            "density:normal" => return Ok(WeightingKind::DensityReciprocal(ErrorFamily::Normal)),
            _ => {}
        }
        if let Some(df) = s.strip_prefix("density:t") {
            let df: f64 = df
                .parse()
                .ok()
                .filter(|d: &f64| *d > 0.0 && d.is_finite())
                .ok_or_else(|| Error::InvalidArgument(format!("bad t degrees of freedom in '{s}'")))?;
            return Ok(WeightingKind::DensityReciprocal(ErrorFamily::StudentT { df }));
        }
        if let Some(path) = s.strip_prefix("custom:") {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::InvalidArgument(format!("cannot read weighting file '{path}': {e}")))?;
            return parse_matrix(&text).map(WeightingKind::Custom);
        }
        Err(Error::InvalidArgument(format!("unknown weighting '{s}'")))
    }
}

/// Parses a whitespace-separated square matrix, one row per line.
pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut rows = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("line {}: '{t}' is not a number", line_no + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let k = rows.len();
    if k == 0 || rows.iter().any(|r| r.len() != k) {
        return Err(Error::InvalidArgument(format!("weighting matrix must be square, got {k} rows")));
    }
    Ok(DMatrix::from_fn(k, k, |r, c| rows[r][c]))
}

/// A weighting specification materialized for `K` levels.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightingMatrix {
    kind: WeightingKind,
    taus: Vec<f64>,
    vn: f64,
    materialized: DMatrix<f64>,
}

impl WeightingMatrix {
    /// Materializes `kind` for the levels `taus`; `vn` is only used by
    /// [`WeightingKind::InverseA`].
    pub fn new(kind: WeightingKind, taus: &[f64], vn: f64) -> Result<Self> {
        let k = taus.len();
        let materialized = match &kind {
            WeightingKind::InverseA => {
                if !(vn > 1e-12) {
                    return Err(Error::SingularProjection(format!("V_n = {vn:.3e}")));
                }
                (delta_matrix(taus) * vn).try_inverse().ok_or(Error::SingularA)?
            }
            WeightingKind::Identity => DMatrix::identity(k, k),
            WeightingKind::InverseDiagDelta => {
                DMatrix::from_fn(k, k, |r, c| if r == c { 1.0 / (taus[r] * (1.0 - taus[r])) } else { 0.0 })
            }
            WeightingKind::DensityReciprocal(family) => DMatrix::from_fn(k, k, |r, c| {
                if r == c {
                    family.density_at_quantile(taus[r]).powi(-2)
                } else {
                    0.0
                }
            }),
            WeightingKind::Custom(m) => {
                if m.nrows() != k || m.ncols() != k {
                    return Err(Error::DimensionMismatch(format!(
                        "custom weighting is {}x{}, expected {k}x{k}",
                        m.nrows(),
                        m.ncols()
                    )));
                }
                m.clone()
            }
        };
        check_spd(&materialized)?;
        Ok(WeightingMatrix { kind, taus: taus.to_vec(), vn, materialized: symmetrize(&materialized) })
    }

    pub fn for_state(kind: WeightingKind, state: &RankScoreState) -> Result<Self> {
        Self::new(kind, &state.taus, state.vn)
    }

    pub fn kind(&self) -> &WeightingKind {
        &self.kind
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.materialized
    }

    /// Weighting used for the subset `C`: the principal sub-matrix, except
    /// for `InverseA`, which uses `(V_n Delta_C)^{-1}`.
    pub fn restrict(&self, subset: &HypothesisSubset) -> Result<DMatrix<f64>> {
        match self.kind {
            WeightingKind::InverseA => {
                let sub: Vec<f64> = subset.indices().iter().map(|&j| self.taus[j]).collect();
                let inv = (delta_matrix(&sub) * self.vn).try_inverse().ok_or(Error::SingularA)?;
                Ok(symmetrize(&inv))
            }
            _ => Ok(principal_submatrix(&self.materialized, subset.indices())),
        }
    }
}

fn check_spd(m: &DMatrix<f64>) -> Result<()> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::NotPositiveDefinite("non-finite entries".into()));
    }
    if !is_symmetric(m, 1e-10) {
        return Err(Error::NotPositiveDefinite("matrix is not symmetric".into()));
    }
    let (values, _) = sorted_eigen(&symmetrize(m));
    let max = *values.last().unwrap();
    if !(max > 0.0) || values[0] <= 1e-10 * max {
        return Err(Error::NotPositiveDefinite(format!(
            "eigenvalues range from {:.3e} to {:.3e}",
            values[0], max
        )));
    }
    Ok(())
}

/// Eigenvalues of `A^{1/2} B A^{1/2}`, ascending, with eigenvectors.
fn mixture_spectrum(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let (half, inv_half) = sym_sqrt_pair(a, 1e-14).ok_or(Error::SingularA)?;
    let m = symmetrize(&(&half * b * &half));
    let (values, vectors) = sorted_eigen(&m);
    let max = *values.last().unwrap();
    if !(max > 0.0) || values[0] <= 1e-12 * max {
        return Err(Error::NotPositiveDefinite(format!(
            "mixture weights range from {:.3e} to {:.3e}",
            values[0], max
        )));
    }
    Ok((values, vectors, inv_half))
}

/// Common value of `weights` if they agree to [`EQUAL_WEIGHT_TOL`].
fn common_weight(weights: &[f64]) -> Option<f64> {
    let max = weights.iter().fold(f64::MIN, |m, &w| m.max(w));
    let min = weights.iter().fold(f64::MAX, |m, &w| m.min(w));
    (max - min <= EQUAL_WEIGHT_TOL * max).then(|| weights.iter().sum::<f64>() / weights.len() as f64)
}

/// Upper tail of `sum_i w_i chi2_1` at `x`.
fn weighted_tail(weights: &[f64], x: f64) -> Result<f64> {
    match common_weight(weights) {
        Some(w) => Ok(chisq_upper(x / w, weights.len())),
        None => imhof_upper(&WeightedChiSquareMixture::central(weights.to_vec())?, x),
    }
}

/// `T* = S_C' B_C S_C` against the weighted chi-square mixture with weights
/// from the spectrum of `A_C^{1/2} B_C A_C^{1/2}`.
pub fn statistic_generalized(
    state: &RankScoreState,
    subset: &HypothesisSubset,
    weighting: &WeightingMatrix,
) -> Result<TestOutcome> {
    state.check_subset(subset)?;
    state.check_vn()?;
    if weighting.taus.len() != state.k() {
        return Err(Error::DimensionMismatch(format!(
            "weighting built for K = {}, state has K = {}",
            weighting.taus.len(),
            state.k()
        )));
    }
    let b = weighting.restrict(subset)?;
    let a = state.a_subset(subset);
    let s = state.s_subset(subset);
    let statistic = (s.transpose() * &b * &s)[(0, 0)].max(0.0);
    let (weights, _, _) = mixture_spectrum(&a, &b)?;
    let p_value = weighted_tail(&weights, statistic)?;
    Ok(TestOutcome { statistic, reference: Reference::WeightedChiSquare { weights }, p_value, subset: subset.clone() })
}

/// `zeta = g' A^{-1} g`.
pub fn noncentrality_standard(g: &[f64], a: &DMatrix<f64>) -> Result<f64> {
    check_square(g, a, "A")?;
    let chol = a.clone().cholesky().ok_or(Error::SingularA)?;
    let g = DVector::from_column_slice(g);
    Ok(g.dot(&chol.solve(&g)).max(0.0))
}

/// Weights `lambda_i` and noncentralities `zeta_i = (b_i' A^{-1/2} g)^2` from
/// the eigenpairs `(lambda_i, b_i)` of `A^{1/2} B A^{1/2}`.
pub fn noncentrality_generalized(g: &[f64], a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    check_square(g, a, "A")?;
    check_square(g, b, "B")?;
    check_spd(b)?;
    let (weights, vectors, inv_half) = mixture_spectrum(a, b)?;
    let gz = inv_half * DVector::from_column_slice(g);
    let zeta = (0..weights.len()).map(|i| vectors.column(i).dot(&gz).powi(2)).collect();
    Ok((weights, zeta))
}

fn check_square(g: &[f64], m: &DMatrix<f64>, name: &str) -> Result<()> {
    if m.nrows() != g.len() || m.ncols() != g.len() {
        return Err(Error::DimensionMismatch(format!(
            "{name} is {}x{}, g has length {}",
            m.nrows(),
            m.ncols(),
            g.len()
        )));
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("alpha = {alpha} is not in (0, 1)")))
    }
}

/// Asymptotic power of the standard test under the local alternative `g`.
pub fn power_standard(g: &[f64], a: &DMatrix<f64>, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let zeta = noncentrality_standard(g, a)?;
    let k = g.len();
    Ok(chisq_noncentral_upper(chisq_upper_quantile(alpha, k), k, zeta))
}

/// Asymptotic power of the weighted test with matrix `B` under `g`.
pub fn power_generalized(g: &[f64], a: &DMatrix<f64>, b: &DMatrix<f64>, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let (weights, zeta) = noncentrality_generalized(g, a, b)?;
    let k = g.len();
    if common_weight(&weights).is_some() {
        let total: f64 = zeta.iter().sum();
        return Ok(chisq_noncentral_upper(chisq_upper_quantile(alpha, k), k, total));
    }
    let critical = mixture_quantile(&WeightedChiSquareMixture::central(weights.clone())?, alpha)?;
    imhof_upper(&WeightedChiSquareMixture::noncentral(weights, zeta)?, critical)
}
