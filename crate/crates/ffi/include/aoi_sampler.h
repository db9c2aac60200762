#ifndef AOI_SAMPLER_H
#define AOI_SAMPLER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every fallible call.
 */
typedef enum AoiStatus {
  AOI_STATUS_OK = 0,
  AOI_STATUS_NULL_POINTER = 1,
  AOI_STATUS_INVALID_UTF8 = 2,
  AOI_STATUS_INVALID_PARAMETER = 3,
  AOI_STATUS_NOT_BRACKETED = 4,
  AOI_STATUS_INFEASIBLE = 5,
  AOI_STATUS_RUNTIME = 6,
  AOI_STATUS_PANIC = 7,
} AoiStatus;

/**
 * A delay distribution.
 */
typedef struct AoiModel AoiModel;

/**
 * An online threshold learner.
 */
typedef struct AoiSampler AoiSampler;

typedef struct AoiMoments {
  double mean;
  double second_moment;
  /**
   * `INFINITY` for unbounded support.
   */
  double upper_support;
} AoiMoments;

/**
 * `E[max{beta, D}]` and `E[max{beta, D}^2 / 2]`.
 */
typedef struct AoiThresholdIntegrals {
  double e_max;
  double e_half_max_sq;
} AoiThresholdIntegrals;

typedef struct AoiOracleSolution {
  double gamma_star;
  double nu_star;
  /**
   * Waiting threshold `gamma_star + nu_star`.
   */
  double beta;
  double mean_cycle_length;
  double aoi_star;
} AoiOracleSolution;

typedef struct AoiGammaBounds {
  double gamma_lb;
  double gamma_ub;
} AoiGammaBounds;

/**
 * Learner parameters. `inv_f_max = 0` disables the frequency constraint and
 * `wait_cap = INFINITY` disables the wait-cap counter.
 */
typedef struct AoiSamplerConfig {
  double gamma_lb;
  double gamma_ub;
  double d_lb;
  double v;
  double inv_f_max;
  double wait_cap;
} AoiSamplerConfig;

typedef struct AoiSamplerState {
  uint64_t k;
  double gamma;
  double debt;
} AoiSamplerState;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *aoi_version(void);

/**
 * Message of the last failed call on this thread, or NULL after a success.
 * Valid until the next library call on the same thread.
 */
const char *aoi_last_error_message(void);

/**
 * Parses a model from JSON (`{"kind": "uniform", "a": 0, "b": 1}`) or the
 * short form (`uniform:0,1`, `lognormal:1,1.3`).
 *
 * # Safety
 * `spec` must be a NUL-terminated string and `out` a valid pointer.
 */
enum AoiStatus aoi_model_parse(const char *spec, struct AoiModel **out);

/**
 * # Safety
 * `model` must come from [`aoi_model_parse`] and not be used afterwards.
 */
void aoi_model_free(struct AoiModel *model);

/**
 * # Safety
 * Pointers must be valid.
 */
enum AoiStatus aoi_model_moments(const struct AoiModel *model, struct AoiMoments *out);

/**
 * # Safety
 * Pointers must be valid.
 */
enum AoiStatus aoi_model_cdf(const struct AoiModel *model, double x, double *out);

/**
 * # Safety
 * Pointers must be valid.
 */
enum AoiStatus aoi_threshold_integrals(const struct AoiModel *model,
                                       double beta,
                                       struct AoiThresholdIntegrals *out);

/**
 * Known-distribution optimum. `f_max = INFINITY` removes the frequency
 * constraint.
 *
 * # Safety
 * Pointers must be valid.
 */
enum AoiStatus aoi_oracle_solve(const struct AoiModel *model,
                                double f_max,
                                double tol,
                                struct AoiOracleSolution *out);

/**
 * Average age of the stationary policy that waits `(beta - D)+`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum AoiStatus aoi_stationary_aoi(const struct AoiModel *model, double beta, double *out);

/**
 * Window known to contain the optimal threshold, from moment bounds.
 *
 * # Safety
 * `out` must be valid.
 */
enum AoiStatus aoi_gamma_bounds(double d_lb,
                                double d_ub,
                                double m_lb,
                                double m_ub,
                                double f_max,
                                struct AoiGammaBounds *out);

/**
 * Step size of cycle `k` for delay lower bound `d_lb > 0`.
 */
double aoi_step_size(uint64_t k, double d_lb);

/**
 * Age area of one cycle given the previous cycle length.
 */
double aoi_cycle_area(double prev_length, double delay, double wait);

/**
 * New learner with the initial threshold drawn uniformly from the window
 * using `seed`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum AoiStatus aoi_sampler_new(const struct AoiSamplerConfig *config,
                               uint64_t seed,
                               struct AoiSampler **out);

/**
 * New learner resumed from an explicit state.
 *
 * # Safety
 * Pointers must be valid.
 */
enum AoiStatus aoi_sampler_with_state(const struct AoiSamplerConfig *config,
                                      const struct AoiSamplerState *state,
                                      struct AoiSampler **out);

/**
 * # Safety
 * `sampler` must come from this library and not be used afterwards.
 */
void aoi_sampler_free(struct AoiSampler *sampler);

/**
 * Waiting time for the update whose delay was just observed. Does not change
 * the learner.
 *
 * # Safety
 * Pointers must be valid.
 */
enum AoiStatus aoi_sampler_decide_wait(const struct AoiSampler *sampler, double delay, double *out);

/**
 * Feeds back a finished cycle.
 *
 * # Safety
 * `sampler` must be valid.
 */
enum AoiStatus aoi_sampler_observe(struct AoiSampler *sampler, double delay, double wait);

/**
 * # Safety
 * Pointers must be valid.
 */
enum AoiStatus aoi_sampler_state(const struct AoiSampler *sampler, struct AoiSamplerState *out);

/**
 * # Safety
 * Pointers must be valid.
 */
enum AoiStatus aoi_sampler_wait_cap_exceedances(const struct AoiSampler *sampler, uint64_t *out);

/**
 * Runs one simulation described by a JSON run config and returns a JSON
 * summary. Free the result with [`aoi_string_free`].
 *
 * # Safety
 * `config_json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum AoiStatus aoi_simulate_json(const char *config_json, char **out);

/**
 * Runs `runs` seeded replications and returns the ensemble summary as JSON.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum AoiStatus aoi_ensemble_json(const char *config_json, size_t runs, char **out);

/**
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void aoi_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AOI_SAMPLER_H */
