#ifndef QUANTILE_CLOSURE_H
#define QUANTILE_CLOSURE_H

/* Generated by cbindgen from the quantile-closure-ffi crate. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum QcStatus {
  QC_STATUS_OK = 0,
  QC_STATUS_NULL_POINTER = 1,
  QC_STATUS_INVALID_ARGUMENT = 2,
  QC_STATUS_VALIDATION = 3,
  QC_STATUS_DEGENERATE = 4,
  QC_STATUS_NOT_CONVERGED = 5,
  QC_STATUS_BANDWIDTH_INFEASIBLE = 6,
  QC_STATUS_SINGULAR = 7,
  QC_STATUS_NOT_POSITIVE_DEFINITE = 8,
  QC_STATUS_QUADRATURE_FAILURE = 9,
  QC_STATUS_TOO_MANY_HYPOTHESES = 10,
  QC_STATUS_BUFFER_TOO_SMALL = 11,
  QC_STATUS_PANIC = 12,
} QcStatus;

typedef enum QcWeightingKind {
  QC_WEIGHTING_KIND_IDENTITY = 0,
  /**
   * `B = A^{-1}`, the standard statistic.
   */
  QC_WEIGHTING_KIND_INVERSE_A = 1,
  QC_WEIGHTING_KIND_INVERSE_DIAG_DELTA = 2,
  QC_WEIGHTING_KIND_DENSITY_NORMAL = 3,
  /**
   * Reciprocal squared Student-t density; uses `df`.
   */
  QC_WEIGHTING_KIND_DENSITY_T = 4,
  /**
   * K x K row-major matrix in `custom`.
   */
  QC_WEIGHTING_KIND_CUSTOM = 5,
} QcWeightingKind;

typedef struct QcClosureReport QcClosureReport;

typedef struct QcDataset QcDataset;

typedef struct QcScoreState QcScoreState;

typedef struct QcWeighting {
  enum QcWeightingKind kind;
  double df;
  const double *custom;
} QcWeighting;

/**
 * Message of the last failed call on this thread; empty if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *qc_last_error(void);

/**
 * Builds a dataset from `n` responses `y`, target covariate `x` and the
 * `n x p` row-major nuisance design `z`. With `add_intercept` nonzero a
 * column of ones is prepended to `z`; otherwise its first column must be
 * the intercept.
 *
 * # Safety
 * `y` and `x` must point to `n` doubles, `z` to `n * p` doubles, `out` to
 * writable storage for one pointer.
 */
enum QcStatus qc_dataset_new(const double *y,
                             const double *x,
                             const double *z,
                             size_t n,
                             size_t p,
                             int32_t add_intercept,
                             struct QcDataset **out);

/**
 * # Safety
 * `dataset` must come from [`qc_dataset_new`] and not be used afterwards.
 */
void qc_dataset_free(struct QcDataset *dataset);

/**
 * Validates the dataset against `k` levels and computes the rank-score
 * vector and its covariance. `null_values` may be null for all zeros.
 *
 * # Safety
 * `taus` (and `null_values` when non-null) must point to `k` doubles.
 */
enum QcStatus qc_score_state_new(const struct QcDataset *dataset,
                                 const double *taus,
                                 const double *null_values,
                                 size_t k,
                                 struct QcScoreState **out);

/**
 * # Safety
 * `state` must come from [`qc_score_state_new`] and not be used afterwards.
 */
void qc_score_state_free(struct QcScoreState *state);

/**
 * Number of levels, or 0 for a null handle.
 *
 * # Safety
 * `state` must be null or a live handle.
 */
size_t qc_score_state_k(const struct QcScoreState *state);

/**
 * Copies the `k` rank scores into `out` and the pooled projection variance
 * into `vn` (either may be null).
 *
 * # Safety
 * `out`, when non-null, must have room for `len` doubles.
 */
enum QcStatus qc_score_state_scores(const struct QcScoreState *state,
                                    double *out,
                                    size_t len,
                                    double *vn);

/**
 * Standard chi-square rank-score test of the levels `indices`.
 *
 * # Safety
 * `indices` must point to `len` values; outputs must be writable.
 */
enum QcStatus qc_statistic_standard(const struct QcScoreState *state,
                                    const size_t *indices,
                                    size_t len,
                                    double *statistic,
                                    double *p_value);

/**
 * Weighted rank-score test of the levels `indices` with weighting `w`.
 *
 * # Safety
 * As [`qc_statistic_standard`]; a custom weighting must hold `k * k`
 * doubles.
 */
enum QcStatus qc_statistic_generalized(const struct QcScoreState *state,
                                       const size_t *indices,
                                       size_t len,
                                       struct QcWeighting w,
                                       double *statistic,
                                       double *p_value);

/**
 * Closed testing at level `alpha` with the weighted local tests.
 *
 * # Safety
 * `out` must be writable; see [`qc_statistic_generalized`] for `w`.
 */
enum QcStatus qc_closed_test(const struct QcScoreState *state,
                             struct QcWeighting w,
                             double alpha,
                             struct QcClosureReport **out);

/**
 * # Safety
 * `report` must come from [`qc_closed_test`] and not be used afterwards.
 */
void qc_closure_report_free(struct QcClosureReport *report);

/**
 * Per-level adjusted p-values and decisions (1 = rejected). Either output
 * may be null.
 *
 * # Safety
 * Non-null outputs must have room for `len` entries.
 */
enum QcStatus qc_closure_report_adjusted(const struct QcClosureReport *report,
                                         double *adjusted_p,
                                         uint8_t *rejected,
                                         size_t len);

/**
 * Local and closed-testing adjusted p-value of the subset with bit mask
 * `mask` (bit j set for level j).
 *
 * # Safety
 * Non-null outputs must be writable.
 */
enum QcStatus qc_closure_report_subset(const struct QcClosureReport *report,
                                       uint32_t mask,
                                       double *local_p,
                                       double *adjusted_p);

/**
 * `P(sum_i w_i chi2_1(zeta_i) > x)`; `noncentralities` may be null.
 *
 * # Safety
 * `weights` (and `noncentralities` when non-null) must point to `k`
 * doubles.
 */
enum QcStatus qc_imhof_upper(const double *weights,
                             const double *noncentralities,
                             size_t k,
                             double x,
                             double *out);

/**
 * Bonferroni-adjusted p-values.
 *
 * # Safety
 * `p` and `out` must point to `k` doubles.
 */
enum QcStatus qc_bonferroni(const double *p, size_t k, double *out);

/**
 * Holm step-down adjusted p-values.
 *
 * # Safety
 * `p` and `out` must point to `k` doubles.
 */
enum QcStatus qc_holm(const double *p, size_t k, double *out);

#endif  /* QUANTILE_CLOSURE_H */
