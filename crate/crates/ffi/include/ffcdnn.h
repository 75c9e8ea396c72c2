#ifndef FFCDNN_H
#define FFCDNN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum FfcdnnStatus {
  FFCDNN_STATUS_OK = 0,
  FFCDNN_STATUS_NULL_POINTER = 1,
  FFCDNN_STATUS_INVALID_INPUT = 2,
  FFCDNN_STATUS_NUMERIC = 3,
  FFCDNN_STATUS_IO = 4,
  FFCDNN_STATUS_PANIC = 5,
} FfcdnnStatus;

// Opaque trained network.
typedef struct FfcdnnModel FfcdnnModel;

// Metrics of a square count matrix. Undefined ratios are NaN.
typedef struct FfcdnnMetrics {
  // Overall accuracy in percent.
  double oa;
  double kappa;
} FfcdnnMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the
// next call into this library on the same thread.
const char *ffcdnn_last_error(void);

// Library version as a static NUL-terminated string.
const char *ffcdnn_version(void);

// Loads a model file. On success `*out` owns a handle to release with
// [`ffcdnn_model_free`].
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum FfcdnnStatus ffcdnn_model_load(const char *path, struct FfcdnnModel **out);

// Releases a handle from [`ffcdnn_model_load`]. Null is ignored.
//
// # Safety
// `model` must be null or a live handle not freed before.
void ffcdnn_model_free(struct FfcdnnModel *model);

// Number of doubles one patch holds: `k * k * steps * 2`, laid out as
// `[row][col][step][channel]` with channel 0 = LAI proxy, 1 = LCC proxy.
//
// # Safety
// `model` must be a live handle or null (returns 0).
size_t ffcdnn_model_input_len(const struct FfcdnnModel *model);

// Classifies one patch. Writes the class index (0 healthy, 1 yellow rust,
// 2 nitrogen deficiency) to `*label` and, when `scores` is not null, the
// three per-class scores.
//
// # Safety
// `values` must point to `len` doubles, `label` must be writable, and
// `scores` must be null or point to 3 writable doubles.
enum FfcdnnStatus ffcdnn_model_predict(const struct FfcdnnModel *model,
                                       const double *values,
                                       size_t len,
                                       uint32_t *label,
                                       double *scores);

// Overall accuracy, kappa, and per-class user's and producer's accuracy of
// a `classes x classes` count matrix given row-major as
// `counts[predicted * classes + actual]`.
//
// # Safety
// `counts` must point to `classes * classes` values, `out` must be
// writable, and `ua`/`pa` must each be null or hold `classes` doubles.
enum FfcdnnStatus ffcdnn_metrics(const uint64_t *counts,
                                 size_t classes,
                                 struct FfcdnnMetrics *out,
                                 double *ua,
                                 double *pa);

// Forward DFT of a real signal, scaled by `1/n`. Writes `n` bins to
// `re_out` and `im_out`.
//
// # Safety
// `signal` must point to `n` doubles; `re_out` and `im_out` to `n` writable doubles.
enum FfcdnnStatus ffcdnn_dft(const double *signal, size_t n, double *re_out, double *im_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FFCDNN_H */
