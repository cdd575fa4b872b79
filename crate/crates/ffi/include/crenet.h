#ifndef CRENET_H
#define CRENET_H

/* Generated by cbindgen from crates/ffi. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum CrenStatus {
  CREN_STATUS_OK = 0,
  CREN_STATUS_NULL_POINTER = 1,
  CREN_STATUS_INVALID_ARGUMENT = 2,
  CREN_STATUS_IO = 3,
  CREN_STATUS_FORMAT = 4,
  CREN_STATUS_SHAPE = 5,
  CREN_STATUS_CORRUPT = 6,
  CREN_STATUS_INTERNAL = 7,
} CrenStatus;

// Opaque per-pixel brightness condition.
typedef struct CrenCondition CrenCondition;

// Opaque RGB image with values in [0, 1].
typedef struct CrenImage CrenImage;

// Opaque network weights.
typedef struct CrenModel CrenModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. Valid until the
// next failing call on the same thread.
const char *cren_last_error(void);

// Library version as a static NUL-terminated string.
const char *cren_version(void);

// Creates an image from `height * width * 3` interleaved RGB floats in [0, 1].
//
// # Safety
// `rgb` must point to `height * width * 3` readable floats; `out` must be
// writable.
enum CrenStatus cren_image_new(size_t height,
                               size_t width,
                               const float *rgb,
                               struct CrenImage **out);

// Reads a binary PPM or 8-bit RGB PNG.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum CrenStatus cren_image_read(const char *path, struct CrenImage **out);

// Writes PNG when the path ends in `.png`, binary PPM otherwise.
//
// # Safety
// `image` must be a live handle; `path` a NUL-terminated string.
enum CrenStatus cren_image_write(const struct CrenImage *image, const char *path);

// # Safety
// `image` must be a live handle; `height` and `width` writable.
enum CrenStatus cren_image_dims(const struct CrenImage *image, size_t *height, size_t *width);

// Copies the interleaved RGB data into `buffer`, which must hold at least
// `height * width * 3` floats (`len` is its capacity in floats).
//
// # Safety
// `image` must be a live handle; `buffer` must have `len` writable floats.
enum CrenStatus cren_image_copy_data(const struct CrenImage *image, float *buffer, size_t len);

// # Safety
// `image` must be NULL or a handle not yet freed.
void cren_image_free(struct CrenImage *image);

// Builds a condition map from an image with a classical enhancer:
// `gamma:<g>`, `he`, `lahe[:tile[:clip]]` or `lime[:radius[:eps]]`.
//
// # Safety
// `image` must be a live handle, `spec` a NUL-terminated string, `out`
// writable.
enum CrenStatus cren_condition_make(const struct CrenImage *image,
                                    const char *spec,
                                    struct CrenCondition **out);

// Creates a condition map from `height * width` values in [0, 1].
//
// # Safety
// `values` must point to `height * width` readable floats; `out` writable.
enum CrenStatus cren_condition_new(size_t height,
                                   size_t width,
                                   const float *values,
                                   struct CrenCondition **out);

// # Safety
// `cond` must be NULL or a handle not yet freed.
void cren_condition_free(struct CrenCondition *cond);

// He-initialized weights from a seed.
//
// # Safety
// `out` must be writable.
enum CrenStatus cren_model_init(uint64_t seed, struct CrenModel **out);

// # Safety
// `path` must be a NUL-terminated string; `out` writable.
enum CrenStatus cren_model_load(const char *path, struct CrenModel **out);

// # Safety
// `model` must be a live handle; `path` a NUL-terminated string.
enum CrenStatus cren_model_save(const struct CrenModel *model, const char *path);

// # Safety
// `model` must be NULL or a handle not yet freed.
void cren_model_free(struct CrenModel *model);

// Runs the network on a whole image under `cond` (same size as `image`).
//
// # Safety
// `model`, `image`, `cond` must be live handles; `out` writable.
enum CrenStatus cren_enhance(const struct CrenModel *model,
                             const struct CrenImage *image,
                             const struct CrenCondition *cond,
                             struct CrenImage **out);

// PSNR in dB over all channels, capped at 99.
//
// # Safety
// `a`, `b` must be live handles; `out` writable.
enum CrenStatus cren_psnr(const struct CrenImage *a, const struct CrenImage *b, double *out);

// SSIM of the V channels (11x11 Gaussian window, sigma 1.5).
//
// # Safety
// `a`, `b` must be live handles; `out` writable.
enum CrenStatus cren_ssim(const struct CrenImage *a, const struct CrenImage *b, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CRENET_H */
