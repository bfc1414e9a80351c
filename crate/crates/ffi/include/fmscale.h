#ifndef FMSCALE_H
#define FMSCALE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FmsMethod {
  FMS_METHOD_ODE = 0,
  FMS_METHOD_SDE = 1,
  FMS_METHOD_EDM_SDE = 2,
  FMS_METHOD_SCORE_SDE = 3,
  FMS_METHOD_SCORE_ORTH_ODE = 4,
  FMS_METHOD_DMFM_ODE = 5,
} FmsMethod;

/**
 * Result codes.
 */
typedef enum FmsStatus {
  FMS_STATUS_OK = 0,
  FMS_STATUS_NULL_POINTER = 1,
  FMS_STATUS_INVALID_ARGUMENT = 2,
  FMS_STATUS_DIMENSION = 3,
  FMS_STATUS_TIME_RANGE = 4,
  FMS_STATUS_SINGULARITY = 5,
  FMS_STATUS_NUMERIC = 6,
  FMS_STATUS_SEARCH = 7,
  FMS_STATUS_PANIC = 99,
} FmsStatus;

/**
 * Opaque Gaussian-mixture target.
 */
typedef struct FmsTarget FmsTarget;

/**
 * Stepper settings. EDM uses a constant beta profile and Score-SDE the
 * decaying profile `1 - t`, both scaled by `noise_scale`.
 */
typedef struct FmsStepperConfig {
  enum FmsMethod method;
  size_t n_steps;
  double noise_scale;
  double eta;
  double alpha_start;
  double alpha_end;
  /**
   * Fixed RBF bandwidth; zero or negative selects the median heuristic.
   */
  double kernel_bandwidth;
} FmsStepperConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *fms_version(void);

/**
 * Message of the last failed call on this thread, or "" after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *fms_last_error_message(void);

/**
 * Defaults for `method` at its reference noise scale.
 */
struct FmsStepperConfig fms_stepper_default(enum FmsMethod method, size_t n_steps);

/**
 * Create a diagonal Gaussian mixture with `n_components` components in `dim`
 * dimensions. `means` and `variances` hold `n_components * dim` values.
 *
 * # Safety
 * Array arguments must point to the stated number of readable values and
 * `out` to writable storage for one pointer.
 */
enum FmsStatus fms_target_new(size_t n_components,
                              size_t dim,
                              const double *weights,
                              const double *means,
                              const double *variances,
                              struct FmsTarget **out);

/**
 * Release a target. Null is accepted.
 *
 * # Safety
 * `target` must be null or a live handle from [`fms_target_new`].
 */
void fms_target_free(struct FmsTarget *target);

/**
 * Dimension of the target, or 0 for null.
 *
 * # Safety
 * `target` must be null or a live handle.
 */
size_t fms_target_dim(const struct FmsTarget *target);

/**
 * `log p_t(x)`; `x` holds `dim` values.
 *
 * # Safety
 * Pointers must be valid for the stated sizes.
 */
enum FmsStatus fms_log_density(const struct FmsTarget *target,
                               const double *x,
                               double t,
                               double *out);

/**
 * Marginal velocity at `(x, t)` into `out` (`dim` values).
 *
 * # Safety
 * Pointers must be valid for `dim` values.
 */
enum FmsStatus fms_velocity(const struct FmsTarget *target, const double *x, double t, double *out);

/**
 * Marginal score at `(x, t)` into `out` (`dim` values).
 *
 * # Safety
 * Pointers must be valid for `dim` values.
 */
enum FmsStatus fms_score(const struct FmsTarget *target, const double *x, double t, double *out);

/**
 * `(I - s s^T / |s|^2) eps` into `out`; all arrays hold `dim` values.
 *
 * # Safety
 * Pointers must be valid for `dim` values.
 */
enum FmsStatus fms_score_orth_project(const double *eps, const double *s, size_t dim, double *out);

/**
 * Integrate `n` particles from `x0` (`n * dim` values, one batch at t = 0)
 * to t = 1, writing terminals to `out` (`n * dim` values).
 *
 * # Safety
 * Pointers must be valid for the stated sizes.
 */
enum FmsStatus fms_sample(const struct FmsTarget *target,
                          const struct FmsStepperConfig *config,
                          const double *x0,
                          size_t n,
                          uint64_t seed,
                          double *out);

/**
 * Best-of-`n` random search with the log-density verifier and an
 * `n_steps` Euler ODE. Writes the winner (`dim` values), its score and the
 * compute units spent.
 *
 * # Safety
 * Pointers must be valid for the stated sizes.
 */
enum FmsStatus fms_random_search(const struct FmsTarget *target,
                                 size_t n,
                                 size_t n_steps,
                                 uint64_t seed,
                                 double *out_x,
                                 double *out_score,
                                 double *out_compute);

/**
 * Noise search from `x0` (`dim` values at t = 0) with `n` candidates per
 * round, one kept lineage, the standard round start times and the
 * log-density verifier.
 *
 * # Safety
 * Pointers must be valid for the stated sizes.
 */
enum FmsStatus fms_noise_search(const struct FmsTarget *target,
                                const struct FmsStepperConfig *config,
                                const double *x0,
                                size_t n,
                                uint64_t seed,
                                double *out_x,
                                double *out_score,
                                double *out_compute);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FMSCALE_H */
