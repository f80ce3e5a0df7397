#ifndef SPEECH_VAE_H
#define SPEECH_VAE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum SvStatus {
  SV_STATUS_OK = 0,
  SV_STATUS_NULL_POINTER = 1,
  SV_STATUS_INVALID_ARGUMENT = 2,
  SV_STATUS_SHAPE = 3,
  SV_STATUS_IO = 4,
  SV_STATUS_FORMAT = 5,
  SV_STATUS_DATA = 6,
  SV_STATUS_NON_FINITE = 7,
  SV_STATUS_PANIC = 8,
} SvStatus;

// A loaded checkpoint.
typedef struct SvModel SvModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread (empty after a
// successful call). Valid until the next call on the same thread.
const char *sv_last_error(void);

// Library version as a static NUL-terminated string.
const char *sv_version(void);

// Load a checkpoint file. On success `*out` receives a handle to release
// with [`sv_model_free`].
//
// # Safety
// `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
enum SvStatus sv_model_load(const char *path, struct SvModel **out);

// Release a handle from [`sv_model_load`]. Null is ignored.
//
// # Safety
// `model` must be null or a handle not yet freed.
void sv_model_free(struct SvModel *model);

// Segment geometry and latent size of a model.
//
// # Safety
// `model` must be a live handle; the out pointers must be writable.
enum SvStatus sv_model_shape(const struct SvModel *model,
                             size_t *frames,
                             size_t *bins,
                             size_t *latent_dim);

// Posterior means and log-variances of `n` segments.
//
// # Safety
// `x_db` holds `n·frames·bins` floats; `mean` and `log_var` each have room
// for `n·latent_dim` floats.
enum SvStatus sv_encode(const struct SvModel *model,
                        const float *x_db,
                        size_t n,
                        float *mean,
                        float *log_var);

// Decoder output means (dB, floored like extracted features) for `n`
// latent codes.
//
// # Safety
// `z` holds `n·latent_dim` floats; `out_db` has room for `n·frames·bins`.
enum SvStatus sv_decode(const struct SvModel *model, const float *z, size_t n, float *out_db);

// Encode `n` segments, add `shift` (length `latent_dim`) to each posterior
// mean and decode the output means (dB).
//
// # Safety
// `x_db` and `out_db` hold `n·frames·bins` floats; `shift` holds
// `latent_dim` doubles.
enum SvStatus sv_modify(const struct SvModel *model,
                        const float *x_db,
                        size_t n,
                        const double *shift,
                        float *out_db);

// `out = alpha·a + (1 − alpha)·b` for `dim`-dimensional codes, `alpha` in
// `[0, 1]`.
//
// # Safety
// `a`, `b` and `out` each hold `dim` doubles.
enum SvStatus sv_interpolate(const double *a,
                             const double *b,
                             size_t dim,
                             double alpha,
                             double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPEECH_VAE_H */
