#ifndef GOVID_H
#define GOVID_H

#pragma once

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call.
 */
typedef enum GovidStatus {
  GOVID_STATUS_OK = 0,
  GOVID_STATUS_NULL_POINTER = 1,
  GOVID_STATUS_INVALID_ARGUMENT = 2,
  GOVID_STATUS_UNKNOWN_PARAMETER = 3,
  GOVID_STATUS_MODEL_ERROR = 4,
  GOVID_STATUS_SIMULATION_ERROR = 5,
  GOVID_STATUS_OPTIMIZER_ERROR = 6,
  GOVID_STATUS_PANIC = 7,
} GovidStatus;

typedef enum GovidModelKind {
  GOVID_MODEL_KIND_GGOV1 = 0,
  GOVID_MODEL_KIND_ST6B = 1,
} GovidModelKind;

/**
 * Plant model with its parameter table, rebuilt when a parameter changes.
 */
typedef struct GovidModel GovidModel;

/**
 * Whiteness-test outcome.
 */
typedef struct GovidWhiteness {
  double statistic;
  /**
   * Threshold the verdict used.
   */
  double threshold;
  double beta_squared;
  double chi2_threshold;
  /**
   * 1 when the residual passes.
   */
  int32_t pass;
} GovidWhiteness;

/**
 * Cuckoo-search settings. [`govid_cs_default_config`] fills the defaults.
 */
typedef struct GovidCsConfig {
  size_t population;
  size_t max_generations;
  double stop_threshold;
  uint64_t seed;
  double p_a;
  double alpha;
  double lambda;
  double step_scale;
} GovidCsConfig;

/**
 * Objective callback: position of length `dim`, and the caller's pointer.
 * A NaN return aborts the run.
 */
typedef double (*GovidObjectiveFn)(const double *x, size_t dim, void *user_data);

/**
 * Outcome of a cuckoo-search run.
 */
typedef struct GovidCsResult {
  double best_fitness;
  size_t generations;
  size_t evaluations;
  int32_t reached_threshold;
} GovidCsResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message of this thread, or null after a successful call.
 * The pointer stays valid until the next call on the same thread.
 */
const char *govid_last_error(void);

/**
 * Creates a model with the reference parameter table at the default
 * operating point.
 *
 * # Safety
 * `out` must be valid for writing one pointer.
 */
enum GovidStatus govid_model_new(enum GovidModelKind kind, double dt, struct GovidModel **out);

/**
 * # Safety
 * `model` must come from [`govid_model_new`] and not be used afterwards.
 */
void govid_model_free(struct GovidModel *model);

/**
 * # Safety
 * `model` must be a live handle; `name` a NUL-terminated string.
 */
enum GovidStatus govid_model_set_param(struct GovidModel *model, const char *name, double value);

/**
 * # Safety
 * `model` must be a live handle; `name` a NUL-terminated string; `out`
 * valid for writing.
 */
enum GovidStatus govid_model_get_param(const struct GovidModel *model,
                                       const char *name,
                                       double *out);

/**
 * Number of input columns expected by [`govid_model_simulate`].
 *
 * # Safety
 * `model` must be a live handle or null (returns 0).
 */
size_t govid_model_input_count(const struct GovidModel *model);

/**
 * Number of output columns written by [`govid_model_simulate`].
 *
 * # Safety
 * `model` must be a live handle or null (returns 0).
 */
size_t govid_model_tap_count(const struct GovidModel *model);

/**
 * Name of output column `index`, or null when out of range. Owned by the
 * handle.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
const char *govid_model_tap_name(const struct GovidModel *model, size_t index);

/**
 * Simulates `n` samples. `inputs` is row-major `n × input_count` in the
 * plant's input order; `outputs` receives row-major `n × tap_count`.
 *
 * # Safety
 * The buffers must hold the stated number of values.
 */
enum GovidStatus govid_model_simulate(const struct GovidModel *model,
                                      const double *inputs,
                                      size_t n,
                                      double *outputs);

/**
 * Mean squared error of two equal-length signals.
 *
 * # Safety
 * `y` and `yhat` must hold `n` values; `out` valid for writing.
 */
enum GovidStatus govid_mse(const double *y, const double *yhat, size_t n, double *out);

/**
 * Error index in percent (`100 · MSE`).
 *
 * # Safety
 * As [`govid_mse`].
 */
enum GovidStatus govid_error_index_percent(const double *y,
                                           const double *yhat,
                                           size_t n,
                                           double *out);

/**
 * Portmanteau whiteness test over `max_lag` lags at level `alpha`. With
 * `chi2_threshold` non-zero the verdict uses the `χ²(max_lag)` quantile,
 * otherwise `β²`.
 *
 * # Safety
 * `e` must hold `n` values; `out` valid for writing.
 */
enum GovidStatus govid_whiteness(const double *e,
                                 size_t n,
                                 size_t max_lag,
                                 double alpha,
                                 int32_t chi2_threshold,
                                 struct GovidWhiteness *out);

/**
 * Default cuckoo-search settings.
 */
struct GovidCsConfig govid_cs_default_config(void);

/**
 * Minimizes a C objective over the box `[lower, upper]` with cuckoo
 * search. The callback runs on the calling thread, one evaluation at a
 * time. `best` receives `dim` values.
 *
 * # Safety
 * `lower`, `upper` and `best` must hold `dim` values; `config` and
 * `result` must be valid; `objective` must be callable with `user_data`.
 */
enum GovidStatus govid_cs_minimize(size_t dim,
                                   const double *lower,
                                   const double *upper,
                                   const struct GovidCsConfig *config,
                                   GovidObjectiveFn objective,
                                   void *user_data,
                                   double *best,
                                   struct GovidCsResult *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GOVID_H */
