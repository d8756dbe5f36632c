#ifndef CEP_H
#define CEP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CepStatus {
  CEP_STATUS_OK = 0,
  CEP_STATUS_NULL_POINTER = 1,
  CEP_STATUS_INVALID_ARGUMENT = 2,
  /**
   * A factor or posterior could not be normalized.
   */
  CEP_STATUS_NUMERICAL = 3,
  CEP_STATUS_UNSUPPORTED = 4,
  /**
   * A Rust panic was caught at the boundary.
   */
  CEP_STATUS_INTERNAL = 5,
} CepStatus;

typedef enum CepLink {
  CEP_LINK_PROBIT = 0,
  CEP_LINK_LOGISTIC = 1,
} CepLink;

typedef enum CepMethod {
  CEP_METHOD_EP = 0,
  CEP_METHOD_CEP1 = 1,
  CEP_METHOD_CEP2 = 2,
} CepMethod;

typedef enum CepValueKind {
  CEP_VALUE_KIND_CONTINUOUS = 0,
  CEP_VALUE_KIND_BINARY = 1,
} CepValueKind;

typedef struct CepQuadrature CepQuadrature;

typedef struct CepRegressionFit CepRegressionFit;

typedef struct CepTensorFit CepTensorFit;

/**
 * Options for [`cep_regression_fit`] and [`cep_tensor_fit`]; start from
 * [`cep_fit_options_default`].
 */
typedef struct CepFitOptions {
  double prior_var;
  double damping;
  double tol;
  size_t max_sweeps;
  /**
   * Gauss-Hermite order for the logistic link.
   */
  size_t quad_order;
  /**
   * Nonzero selects the parallel schedule.
   */
  uint8_t parallel;
  /**
   * Worker cap for the parallel schedule; 0 computes projections serially.
   */
  size_t threads;
  uint64_t seed;
} CepFitOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into this library on the same thread.
 */
const char *cep_last_error_message(void);

/**
 * Copy the last error message into `buf` (NUL-terminated, truncated to
 * `len`). Returns the full message length excluding the terminator, 0 when
 * there is no error.
 *
 * # Safety
 * `buf` must be null or valid for `len` writes.
 */
size_t cep_last_error_copy(char *buf, size_t len);

struct CepFitOptions cep_fit_options_default(void);

/**
 * Gauss-Hermite rule of `order` points against the standard normal weight.
 *
 * # Safety
 * `out` must be valid for one write.
 */
enum CepStatus cep_gauss_hermite_new(size_t order, struct CepQuadrature **out);

/**
 * # Safety
 * `rule` must be null or a live handle.
 */
size_t cep_gauss_hermite_order(const struct CepQuadrature *rule);

/**
 * Copy nodes and weights (each `len` = order entries).
 *
 * # Safety
 * `rule` must be a live handle; `nodes` and `weights` valid for `len` writes.
 */
enum CepStatus cep_gauss_hermite_copy(const struct CepQuadrature *rule,
                                      double *nodes,
                                      double *weights,
                                      size_t len);

/**
 * `E[g(x)]` for `x ~ N(mean, var)` where `g` is the polynomial with
 * coefficients `coeffs[0] + coeffs[1] x + …`.
 *
 * # Safety
 * `rule` must be a live handle, `coeffs` valid for `n_coeffs` reads, `out` for one write.
 */
enum CepStatus cep_gauss_hermite_expect_poly(const struct CepQuadrature *rule,
                                             double mean,
                                             double var,
                                             const double *coeffs,
                                             size_t n_coeffs,
                                             double *out);

/**
 * # Safety
 * `rule` must be null or a handle not freed before.
 */
void cep_gauss_hermite_free(struct CepQuadrature *rule);

/**
 * Fit a Bayesian classifier with a factorized Gaussian posterior.
 *
 * `features` is `n × d` row-major, `labels` holds `n` values in {0, 1}.
 * `options` may be null for the defaults.
 *
 * # Safety
 * Pointers must be valid for the stated lengths; `out` for one write.
 */
enum CepStatus cep_regression_fit(const double *features,
                                  const double *labels,
                                  size_t n,
                                  size_t d,
                                  enum CepLink link,
                                  enum CepMethod method,
                                  const struct CepFitOptions *options,
                                  struct CepRegressionFit **out);

/**
 * # Safety
 * `fit` must be null or a live handle.
 */
size_t cep_regression_dim(const struct CepRegressionFit *fit);

/**
 * Sweeps run and whether the tolerance was reached (1) or not (0).
 *
 * # Safety
 * `fit` must be a live handle; outputs valid for one write each or null.
 */
enum CepStatus cep_regression_report(const struct CepRegressionFit *fit,
                                     size_t *sweeps,
                                     uint8_t *converged);

/**
 * Copy the posterior means and variances (`d` values each).
 *
 * # Safety
 * `fit` must be a live handle; `means` and `vars` valid for `d` writes.
 */
enum CepStatus cep_regression_posterior(const struct CepRegressionFit *fit,
                                        double *means,
                                        double *vars,
                                        size_t d);

/**
 * Posterior predictive probability of `y = 1` at `x` (`d` values).
 *
 * # Safety
 * `fit` must be a live handle; `x` valid for `d` reads; `out` for one write.
 */
enum CepStatus cep_regression_predict(const struct CepRegressionFit *fit,
                                      const double *x,
                                      size_t d,
                                      double *out);

/**
 * # Safety
 * `fit` must be null or a handle not freed before.
 */
void cep_regression_free(struct CepRegressionFit *fit);

/**
 * Fit a CP decomposition of rank `rank` with the first-order conditional projection.
 *
 * `indices` is `n × order` row-major (0-based), `values` holds `n` entries.
 * `options` may be null for the defaults.
 *
 * # Safety
 * Pointers must be valid for the stated lengths; `out` for one write.
 */
enum CepStatus cep_tensor_fit(const size_t *dims,
                              size_t order,
                              const size_t *indices,
                              const double *values,
                              size_t n,
                              enum CepValueKind kind,
                              size_t rank,
                              const struct CepFitOptions *options,
                              struct CepTensorFit **out);

/**
 * Predictive mean (continuous) or probability of 1 (binary) at `index` (`order` values).
 *
 * # Safety
 * `fit` must be a live handle; `index` valid for `order` reads; `out` for one write.
 */
enum CepStatus cep_tensor_predict(const struct CepTensorFit *fit,
                                  const size_t *index,
                                  size_t order,
                                  double *out);

/**
 * Posterior mean of the noise precision; `Unsupported` for binary fits.
 *
 * # Safety
 * `fit` must be a live handle; `out` valid for one write.
 */
enum CepStatus cep_tensor_noise_precision(const struct CepTensorFit *fit, double *out);

/**
 * Sweeps run and whether the tolerance was reached (1) or not (0).
 *
 * # Safety
 * `fit` must be a live handle; outputs valid for one write each or null.
 */
enum CepStatus cep_tensor_report(const struct CepTensorFit *fit,
                                 size_t *sweeps,
                                 uint8_t *converged);

/**
 * # Safety
 * `fit` must be null or a handle not freed before.
 */
void cep_tensor_free(struct CepTensorFit *fit);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CEP_H */
