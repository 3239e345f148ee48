#ifndef TAILCAL_H
#define TAILCAL_H

/* Generated by cbindgen from tailcal-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Divergence selector for the calibration measures.
 */
typedef enum TcDivergence {
  TC_DIVERGENCE_W1 = 0,
  TC_DIVERGENCE_W1_ORDER_STAT = 1,
  TC_DIVERGENCE_CRAMER = 2,
  TC_DIVERGENCE_KS = 3,
} TcDivergence;

/**
 * Status codes returned by every fallible function.
 */
typedef enum TcStatus {
  TC_STATUS_OK = 0,
  TC_STATUS_NULL_POINTER = 1,
  TC_STATUS_INVALID_ARGUMENT = 2,
  TC_STATUS_UNSUPPORTED = 3,
  TC_STATUS_NUMERICAL_ERROR = 4,
} TcStatus;

/**
 * Opaque forecast-distribution handle.
 */
typedef struct TcDistribution TcDistribution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * NUL-terminated library version string; statically allocated.
 */
const char *tc_version(void);

/**
 * Message for the most recent failure on this thread.
 */
const char *tc_last_error_message(void);

/**
 * Normal distribution left-truncated at `lower`; pass -INFINITY for no
 * truncation.
 *
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum TcStatus tc_dist_trunc_normal(double mu,
                                   double sigma,
                                   double lower,
                                   struct TcDistribution **out);

/**
 * Empirical (ensemble) distribution from `len` member values.
 *
 * # Safety
 * `members` must point to `len` readable doubles; `out` must be valid.
 */
enum TcStatus tc_dist_ensemble(const double *members, uintptr_t len, struct TcDistribution **out);

/**
 * Release a distribution handle. Passing NULL is a no-op.
 *
 * # Safety
 * `handle` must have come from a `tc_dist_*` constructor and must not be
 * used afterwards.
 */
void tc_dist_free(struct TcDistribution *handle);

/**
 * Cumulative distribution function at `x`.
 *
 * # Safety
 * `handle` must be a live handle; `out` must be valid.
 */
enum TcStatus tc_dist_cdf(const struct TcDistribution *handle, double x, double *out);

/**
 * Probability density at `x`; fails with `UNSUPPORTED` for ensembles.
 *
 * # Safety
 * As for `tc_dist_cdf`.
 */
enum TcStatus tc_dist_pdf(const struct TcDistribution *handle, double x, double *out);

/**
 * Quantile at probability `p` in (0, 1).
 *
 * # Safety
 * As for `tc_dist_cdf`.
 */
enum TcStatus tc_dist_quantile(const struct TcDistribution *handle, double p, double *out);

/**
 * Draw `len` values into `out` using a deterministic generator seeded by
 * `seed`.
 *
 * # Safety
 * `out` must point to `len` writable doubles.
 */
enum TcStatus tc_dist_sample(const struct TcDistribution *handle,
                             uint64_t seed,
                             double *out,
                             uintptr_t len);

/**
 * Closed-form CRPS of a truncated normal (lower = -INFINITY for a plain
 * normal).
 *
 * # Safety
 * `out` must be valid.
 */
enum TcStatus tc_crps_trunc_normal(double mu, double sigma, double lower, double y, double *out);

/**
 * Closed-form threshold-weighted CRPS of a truncated normal with
 * indicator weight above `threshold`.
 *
 * # Safety
 * `out` must be valid.
 */
enum TcStatus tc_twcrps_trunc_normal(double mu,
                                     double sigma,
                                     double lower,
                                     double y,
                                     double threshold,
                                     double *out);

/**
 * Negative log density of a distribution handle at `y`.
 *
 * # Safety
 * As for `tc_dist_cdf`.
 */
enum TcStatus tc_log_score(const struct TcDistribution *handle, double y, double *out);

/**
 * Censored likelihood score at `threshold`.
 *
 * # Safety
 * As for `tc_dist_cdf`.
 */
enum TcStatus tc_censored_likelihood_score(const struct TcDistribution *handle,
                                           double y,
                                           double threshold,
                                           double *out);

/**
 * Sample CRPS of an ensemble given by `members`.
 *
 * # Safety
 * `members` must point to `len` readable doubles; `out` must be valid.
 */
enum TcStatus tc_crps_sample(const double *members, uintptr_t len, double y, double *out);

/**
 * Threshold-weighted sample CRPS.
 *
 * # Safety
 * As for `tc_crps_sample`.
 */
enum TcStatus tc_twcrps_sample(const double *members,
                               uintptr_t len,
                               double y,
                               double threshold,
                               double *out);

/**
 * Fair (unbiased) CRPS; requires at least two members.
 *
 * # Safety
 * As for `tc_crps_sample`.
 */
enum TcStatus tc_fair_crps(const double *members, uintptr_t len, double y, double *out);

/**
 * Fair threshold-weighted CRPS; requires at least two members.
 *
 * # Safety
 * As for `tc_crps_sample`.
 */
enum TcStatus tc_fair_twcrps(const double *members,
                             uintptr_t len,
                             double y,
                             double threshold,
                             double *out);

/**
 * Miscalibration of PIT values in [0, 1] under the chosen divergence.
 *
 * # Safety
 * `pits` must point to `len` readable doubles; `out` must be valid.
 */
enum TcStatus tc_mcb(const double *pits, uintptr_t len, enum TcDivergence divergence, double *out);

/**
 * Tail miscalibration from `len` conditional-PIT values of the exceeding
 * cases plus the summed forecast exceedance probability over all cases.
 *
 * # Safety
 * `cpits` must point to `len` readable doubles; `out` must be valid.
 */
enum TcStatus tc_tmcb(const double *cpits,
                      uintptr_t len,
                      double exceedance_prob_sum,
                      enum TcDivergence divergence,
                      double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TAILCAL_H */
