//! C interface to `quantile_closure`.
//!
//! Objects are opaque handles created by `qc_*_new` functions and released
//! with the matching `qc_*_free`. Every fallible call returns a
//! [`QcStatus`]; on failure [`qc_last_error`] describes the error on the
//! calling thread. Matrices are passed row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::DMatrix;
use quantile_closure::distributions::{imhof_upper, WeightedChiSquareMixture};
use quantile_closure::multiplicity::{bonferroni, closed_test, holm, ClosureReport};
use quantile_closure::rankscore::{
    score_state, statistic_generalized, statistic_standard, ErrorFamily, RankScoreState, TestOutcome,
    WeightingKind, WeightingMatrix,
};
use quantile_closure::{validate, Dataset, Error, HypothesisSubset, QuantileSpec};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Validation = 3,
    Degenerate = 4,
    NotConverged = 5,
    BandwidthInfeasible = 6,
    Singular = 7,
    NotPositiveDefinite = 8,
    QuadratureFailure = 9,
    TooManyHypotheses = 10,
    BufferTooSmall = 11,
    Panic = 12,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QcWeightingKind {
    Identity = 0,
    /// `B = A^{-1}`, the standard statistic.
    InverseA = 1,
    InverseDiagDelta = 2,
    DensityNormal = 3,
    /// Reciprocal squared Student-t density; uses `df`.
    DensityT = 4,
    /// K x K row-major matrix in `custom`.
    Custom = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct QcWeighting {
    pub kind: QcWeightingKind,
    pub df: f64,
    pub custom: *const f64,
}

pub struct QcDataset {
    inner: Dataset,
}

pub struct QcScoreState {
    inner: RankScoreState,
}

pub struct QcClosureReport {
    inner: ClosureReport,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> QcStatus {
    match e {
        Error::Validation(_) => QcStatus::Validation,
        Error::Degenerate(_) => QcStatus::Degenerate,
        Error::NotConverged(_) => QcStatus::NotConverged,
        Error::BandwidthInfeasible { .. } => QcStatus::BandwidthInfeasible,
        Error::SingularProjection(_) | Error::SingularA | Error::SingularCovariance => QcStatus::Singular,
        Error::NotPositiveDefinite(_) => QcStatus::NotPositiveDefinite,
        Error::QuadratureFailure(_) => QcStatus::QuadratureFailure,
        Error::TooManyHypotheses { .. } => QcStatus::TooManyHypotheses,
        Error::DimensionMismatch(_) | Error::InvalidArgument(_) => QcStatus::InvalidArgument,
    }
}

struct Failure(QcStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(QcStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> QcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QcStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            QcStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn reference<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write<T>(p: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    p.write(value);
    Ok(())
}

unsafe fn subset(indices: *const usize, len: usize, k: usize) -> Result<HypothesisSubset, Failure> {
    let idx = slice(indices, len, "indices")?;
    HypothesisSubset::new(idx.to_vec(), k).ok_or_else(|| {
        Failure(QcStatus::InvalidArgument, format!("indices {idx:?} do not form a nonempty subset of 0..{k}"))
    })
}

unsafe fn weighting_kind(w: &QcWeighting, k: usize) -> Result<WeightingKind, Failure> {
    Ok(match w.kind {
        QcWeightingKind::Identity => WeightingKind::Identity,
        QcWeightingKind::InverseA => WeightingKind::InverseA,
        QcWeightingKind::InverseDiagDelta => WeightingKind::InverseDiagDelta,
        QcWeightingKind::DensityNormal => WeightingKind::DensityReciprocal(ErrorFamily::Normal),
        QcWeightingKind::DensityT => {
            if !(w.df > 0.0 && w.df.is_finite()) {
                return Err(Failure(QcStatus::InvalidArgument, format!("df = {} must be positive", w.df)));
            }
            WeightingKind::DensityReciprocal(ErrorFamily::StudentT { df: w.df })
        }
        QcWeightingKind::Custom => {
            let m = slice(w.custom, k * k, "custom weighting")?;
            WeightingKind::Custom(DMatrix::from_row_slice(k, k, m))
        }
    })
}

/// Message of the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn qc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Builds a dataset from `n` responses `y`, target covariate `x` and the
/// `n x p` row-major nuisance design `z`. With `add_intercept` nonzero a
/// column of ones is prepended to `z`; otherwise its first column must be
/// the intercept.
///
/// # Safety
/// `y` and `x` must point to `n` doubles, `z` to `n * p` doubles, `out` to
/// writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn qc_dataset_new(
    y: *const f64,
    x: *const f64,
    z: *const f64,
    n: usize,
    p: usize,
    add_intercept: i32,
    out: *mut *mut QcDataset,
) -> QcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let y = slice(y, n, "y")?.to_vec();
        let x = slice(x, n, "x")?.to_vec();
        let z = slice(z, n * p, "z")?;
        let offset = usize::from(add_intercept != 0);
        let design = DMatrix::from_fn(n, p + offset, |i, j| if j < offset { 1.0 } else { z[i * p + j - offset] });
        *out = Box::into_raw(Box::new(QcDataset { inner: Dataset::new(y, x, design) }));
        Ok(())
    })
}

/// # Safety
/// `dataset` must come from [`qc_dataset_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn qc_dataset_free(dataset: *mut QcDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Validates the dataset against `k` levels and computes the rank-score
/// vector and its covariance. `null_values` may be null for all zeros.
///
/// # Safety
/// `taus` (and `null_values` when non-null) must point to `k` doubles.
#[no_mangle]
pub unsafe extern "C" fn qc_score_state_new(
    dataset: *const QcDataset,
    taus: *const f64,
    null_values: *const f64,
    k: usize,
    out: *mut *mut QcScoreState,
) -> QcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let dataset = reference(dataset, "dataset")?;
        let taus = slice(taus, k, "taus")?.to_vec();
        let spec = if null_values.is_null() {
            QuantileSpec::new(taus)
        } else {
            QuantileSpec::with_null_values(taus, slice(null_values, k, "null_values")?.to_vec())
        };
        let problem = validate(dataset.inner.clone(), spec).map_err(Error::from)?;
        let state = score_state(&problem)?;
        *out = Box::into_raw(Box::new(QcScoreState { inner: state }));
        Ok(())
    })
}

/// # Safety
/// `state` must come from [`qc_score_state_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn qc_score_state_free(state: *mut QcScoreState) {
    if !state.is_null() {
        drop(Box::from_raw(state));
    }
}

/// Number of levels, or 0 for a null handle.
///
/// # Safety
/// `state` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qc_score_state_k(state: *const QcScoreState) -> usize {
    state.as_ref().map_or(0, |s| s.inner.k())
}

/// Copies the `k` rank scores into `out` and the pooled projection variance
/// into `vn` (either may be null).
///
/// # Safety
/// `out`, when non-null, must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn qc_score_state_scores(
    state: *const QcScoreState,
    out: *mut f64,
    len: usize,
    vn: *mut f64,
) -> QcStatus {
    guard(|| {
        let state = &reference(state, "state")?.inner;
        if !out.is_null() {
            if len < state.k() {
                return Err(Failure(QcStatus::BufferTooSmall, format!("need {} entries, got {len}", state.k())));
            }
            slice_mut(out, state.k(), "out")?.copy_from_slice(state.s.as_slice());
        }
        if !vn.is_null() {
            *vn = state.vn;
        }
        Ok(())
    })
}

unsafe fn write_outcome(o: TestOutcome, statistic: *mut f64, p_value: *mut f64) -> Result<(), Failure> {
    write(statistic, o.statistic, "statistic")?;
    write(p_value, o.p_value, "p_value")
}

/// Standard chi-square rank-score test of the levels `indices`.
///
/// # Safety
/// `indices` must point to `len` values; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn qc_statistic_standard(
    state: *const QcScoreState,
    indices: *const usize,
    len: usize,
    statistic: *mut f64,
    p_value: *mut f64,
) -> QcStatus {
    guard(|| {
        let state = &reference(state, "state")?.inner;
        let c = subset(indices, len, state.k())?;
        write_outcome(statistic_standard(state, &c)?, statistic, p_value)
    })
}

/// Weighted rank-score test of the levels `indices` with weighting `w`.
///
/// # Safety
/// As [`qc_statistic_standard`]; a custom weighting must hold `k * k`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn qc_statistic_generalized(
    state: *const QcScoreState,
    indices: *const usize,
    len: usize,
    w: QcWeighting,
    statistic: *mut f64,
    p_value: *mut f64,
) -> QcStatus {
    guard(|| {
        let state = &reference(state, "state")?.inner;
        let c = subset(indices, len, state.k())?;
        let weighting = WeightingMatrix::for_state(weighting_kind(&w, state.k())?, state)?;
        write_outcome(statistic_generalized(state, &c, &weighting)?, statistic, p_value)
    })
}

/// Closed testing at level `alpha` with the weighted local tests.
///
/// # Safety
/// `out` must be writable; see [`qc_statistic_generalized`] for `w`.
#[no_mangle]
pub unsafe extern "C" fn qc_closed_test(
    state: *const QcScoreState,
    w: QcWeighting,
    alpha: f64,
    out: *mut *mut QcClosureReport,
) -> QcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let state = &reference(state, "state")?.inner;
        let weighting = WeightingMatrix::for_state(weighting_kind(&w, state.k())?, state)?;
        let report = closed_test(state, &weighting, alpha)?;
        *out = Box::into_raw(Box::new(QcClosureReport { inner: report }));
        Ok(())
    })
}

/// # Safety
/// `report` must come from [`qc_closed_test`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn qc_closure_report_free(report: *mut QcClosureReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Per-level adjusted p-values and decisions (1 = rejected). Either output
/// may be null.
///
/// # Safety
/// Non-null outputs must have room for `len` entries.
#[no_mangle]
pub unsafe extern "C" fn qc_closure_report_adjusted(
    report: *const QcClosureReport,
    adjusted_p: *mut f64,
    rejected: *mut u8,
    len: usize,
) -> QcStatus {
    guard(|| {
        let r = &reference(report, "report")?.inner;
        let k = r.k();
        if len < k {
            return Err(Failure(QcStatus::BufferTooSmall, format!("need {k} entries, got {len}")));
        }
        if !adjusted_p.is_null() {
            slice_mut(adjusted_p, k, "adjusted_p")?.copy_from_slice(&r.adjusted_p);
        }
        if !rejected.is_null() {
            for (dst, &src) in slice_mut(rejected, k, "rejected")?.iter_mut().zip(&r.rejected) {
                *dst = u8::from(src);
            }
        }
        Ok(())
    })
}

/// Local and closed-testing adjusted p-value of the subset with bit mask
/// `mask` (bit j set for level j).
///
/// # Safety
/// Non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn qc_closure_report_subset(
    report: *const QcClosureReport,
    mask: u32,
    local_p: *mut f64,
    adjusted_p: *mut f64,
) -> QcStatus {
    guard(|| {
        let r = &reference(report, "report")?.inner;
        if mask == 0 || (r.k() < 32 && mask >> r.k() != 0) {
            return Err(Failure(QcStatus::InvalidArgument, format!("mask {mask:#x} is not a subset of {} levels", r.k())));
        }
        let c = HypothesisSubset::from_mask(mask).unwrap();
        if !local_p.is_null() {
            *local_p = r.local_p(&c);
        }
        if !adjusted_p.is_null() {
            *adjusted_p = r.subset_adjusted_p(&c);
        }
        Ok(())
    })
}

/// `P(sum_i w_i chi2_1(zeta_i) > x)`; `noncentralities` may be null.
///
/// # Safety
/// `weights` (and `noncentralities` when non-null) must point to `k`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn qc_imhof_upper(
    weights: *const f64,
    noncentralities: *const f64,
    k: usize,
    x: f64,
    out: *mut f64,
) -> QcStatus {
    guard(|| {
        let w = slice(weights, k, "weights")?.to_vec();
        let mix = if noncentralities.is_null() {
            WeightedChiSquareMixture::central(w)?
        } else {
            WeightedChiSquareMixture::noncentral(w, slice(noncentralities, k, "noncentralities")?.to_vec())?
        };
        write(out, imhof_upper(&mix, x)?, "out")
    })
}

unsafe fn adjust(p: *const f64, k: usize, out: *mut f64, f: fn(&[f64]) -> Vec<f64>) -> QcStatus {
    guard(|| {
        let p = slice(p, k, "p")?;
        if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Failure(QcStatus::InvalidArgument, "p-values must lie in [0, 1]".into()));
        }
        slice_mut(out, k, "out")?.copy_from_slice(&f(p));
        Ok(())
    })
}

/// Bonferroni-adjusted p-values.
///
/// # Safety
/// `p` and `out` must point to `k` doubles.
#[no_mangle]
pub unsafe extern "C" fn qc_bonferroni(p: *const f64, k: usize, out: *mut f64) -> QcStatus {
    adjust(p, k, out, bonferroni)
}

/// Holm step-down adjusted p-values.
///
/// # Safety
/// `p` and `out` must point to `k` doubles.
#[no_mangle]
pub unsafe extern "C" fn qc_holm(p: *const f64, k: usize, out: *mut f64) -> QcStatus {
    adjust(p, k, out, holm)
}
