#ifndef TIMES2D_H
#define TIMES2D_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes shared by every function in this library.
typedef enum T2dStatus {
  T2D_STATUS_OK = 0,
  T2D_STATUS_NULL_POINTER = 1,
  T2D_STATUS_INVALID_ARGUMENT = 2,
  T2D_STATUS_IO = 3,
  T2D_STATUS_PARSE = 4,
  T2D_STATUS_SHAPE = 5,
  T2D_STATUS_INPUT_TOO_SHORT = 6,
  T2D_STATUS_METRIC_UNDEFINED = 7,
  T2D_STATUS_CORRUPT_CHECKPOINT = 8,
  T2D_STATUS_INCOMPATIBLE_CHECKPOINT = 9,
  T2D_STATUS_NUMERICAL_FAILURE = 10,
  T2D_STATUS_PANIC = 11,
} T2dStatus;

// A loaded checkpoint ready to forecast.
typedef struct T2dModel T2dModel;

// Shape of a model's input and output windows.
typedef struct T2dDims {
  size_t seq_len;
  size_t pred_len;
  size_t n_vars;
} T2dDims;

// Point and scaled errors of one forecast.
typedef struct T2dMetrics {
  double mse;
  double mae;
  double smape;
  // Valid only when `mase_defined` is 1.
  double mase;
  int32_t mase_defined;
} T2dMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null if none failed.
// The pointer stays valid until the next failing call on the same thread.
const char *t2d_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *t2d_version(void);

// Loads a checkpoint file and stores a new handle in `*out`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum T2dStatus t2d_model_load(const char *path, struct T2dModel **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `model` must come from [`t2d_model_load`] and not be freed twice.
void t2d_model_free(struct T2dModel *model);

// Writes the model's window shape to `*dims`.
//
// # Safety
// Both pointers must be valid.
enum T2dStatus t2d_model_dims(const struct T2dModel *model, struct T2dDims *dims);

// Forecasts `pred_len` steps from one window of `seq_len` rows.
//
// `input` holds `seq_len · n_vars` values, row-major by time step, in data
// units. `output` receives `pred_len · n_vars` values in the same layout.
// Data normalization stored in the checkpoint is applied and undone.
//
// # Safety
// `input` and `output` must point to at least `input_len` and `output_len`
// values respectively.
enum T2dStatus t2d_model_forecast(struct T2dModel *model,
                                  const double *input,
                                  size_t input_len,
                                  double *output,
                                  size_t output_len);

// Finds the `k` dominant periods of a single series.
//
// Results are ordered by descending amplitude. `freqs`, `periods` and
// `amplitudes` must each hold `k` entries.
//
// # Safety
// `series` must point to `len` values and every output to `k` entries.
enum T2dStatus t2d_top_k_periods(const double *series,
                                 size_t len,
                                 size_t k,
                                 size_t *freqs,
                                 size_t *periods,
                                 double *amplitudes);

// Scores one forecast. MASE uses seasonal differences of `actual` at lag
// `season`; when that is undefined `mase_defined` is 0 and the call still
// succeeds.
//
// # Safety
// `pred` and `actual` must point to `len` values and `out` must be valid.
enum T2dStatus t2d_metrics(const double *pred,
                           const double *actual,
                           size_t len,
                           size_t season,
                           struct T2dMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TIMES2D_H */
