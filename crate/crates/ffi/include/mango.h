#ifndef MANGO_H
#define MANGO_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MangoStatus {
  MANGO_STATUS_OK = 0,
  MANGO_STATUS_NULL_POINTER = 1,
  MANGO_STATUS_INVALID_ARGUMENT = 2,
  MANGO_STATUS_IO = 3,
  MANGO_STATUS_NUMERIC = 4,
  MANGO_STATUS_BUFFER_TOO_SMALL = 5,
  MANGO_STATUS_PANIC = 6,
} MangoStatus;

/**
 * A loaded checkpoint.
 */
typedef struct MangoModel MangoModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *mango_version(void);

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length in bytes, or 0 when
 * there is no error.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t mango_last_error(char *buf, size_t len);

/**
 * Loads a checkpoint. On success `*out` owns a model that must be released
 * with [`mango_model_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MangoStatus mango_model_load(const char *path, struct MangoModel **out);

/**
 * # Safety
 * `model` must be null or come from [`mango_model_load`] and not be used
 * afterwards.
 */
void mango_model_free(struct MangoModel *model);

/**
 * Design and score dimensions of a model.
 *
 * # Safety
 * Pointers must be valid.
 */
enum MangoStatus mango_model_dims(const struct MangoModel *model, size_t *d, size_t *m);

/**
 * Draws `k` guided samples. With `alpha_x > 0` designs are pulled into the
 * task bounds. `y_pref` holds `n_pref` preferred score vectors
 * in task units (ignored when `alpha_y` is 0); chain `i` targets row
 * `i % n_pref`. `out` receives `k` rows of `d + m` values in task units.
 * Rows of chains that went non-finite are filled with NaN.
 *
 * # Safety
 * `y_pref` must hold `n_pref * m` values and `out` have room for `out_len`.
 */
enum MangoStatus mango_model_sample(const struct MangoModel *model,
                                    size_t k,
                                    const double *y_pref,
                                    size_t n_pref,
                                    double alpha_x,
                                    double alpha_y,
                                    size_t steps,
                                    uint64_t seed,
                                    double *out,
                                    size_t out_len);

/**
 * Predicts the scores of one design (task units, inside the task bounds).
 * `*converged` is set to 0 when the design block drifted beyond tolerance.
 *
 * # Safety
 * `design` must hold `d` values and `score` have room for `m`.
 */
enum MangoStatus mango_model_predict(const struct MangoModel *model,
                                     const double *design,
                                     size_t d,
                                     double alpha_x,
                                     size_t steps,
                                     uint64_t seed,
                                     double *score,
                                     size_t m,
                                     int32_t *converged);

/**
 * Dimensions of a benchmark task.
 *
 * # Safety
 * `task_id` must be a NUL-terminated string; `d` and `m` valid pointers.
 */
enum MangoStatus mango_task_dims(const char *task_id, size_t *d, size_t *m);

/**
 * Evaluates `n` designs of a benchmark task, writing `n * m` scores.
 *
 * # Safety
 * `x` must hold `n * d` values and `y` have room for `n * m`.
 */
enum MangoStatus mango_task_eval(const char *task_id, const double *x, size_t n, double *y);

/**
 * Sets `*result` to 1 when `a` Pareto-dominates `b` (minimization).
 *
 * # Safety
 * `a` and `b` must hold `m` values.
 */
enum MangoStatus mango_dominates(const double *a, const double *b, size_t m, int32_t *result);

/**
 * Hypervolume dominated by `n` points with respect to `reference`.
 * Exact for one or two objectives, a seeded Monte Carlo estimate otherwise.
 *
 * # Safety
 * `points` must hold `n * m` values and `reference` `m`.
 */
enum MangoStatus mango_hypervolume(const double *points,
                                   size_t n,
                                   size_t m,
                                   const double *reference,
                                   uint64_t seed,
                                   double *result);

/**
 * Inverted generational distance of `n` candidates to `n_ref` reference
 * points.
 *
 * # Safety
 * `candidates` must hold `n * m` values and `reference` `n_ref * m`.
 */
enum MangoStatus mango_igd(const double *candidates,
                           size_t n,
                           const double *reference,
                           size_t n_ref,
                           size_t m,
                           double *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MANGO_H */
