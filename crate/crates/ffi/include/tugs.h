#ifndef TUGS_H
#define TUGS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Which image [`tugs_model_render`] produces.
 */
typedef enum TugsImageKind {
  /**
   * Underwater image with attenuation and backscatter.
   */
  TUGS_IMAGE_KIND_COMPOSED = 0,
  /**
   * Medium-free object image.
   */
  TUGS_IMAGE_KIND_RESTORED = 1,
  TUGS_IMAGE_KIND_BACKSCATTER = 2,
  /**
   * Per-channel transmission of the direct signal.
   */
  TUGS_IMAGE_KIND_ATTENUATION = 3,
} TugsImageKind;

typedef enum TugsStatus {
  TUGS_STATUS_OK = 0,
  TUGS_STATUS_NULL_POINTER = 1,
  TUGS_STATUS_INVALID_ARGUMENT = 2,
  TUGS_STATUS_IO = 3,
  TUGS_STATUS_FORMAT = 4,
  TUGS_STATUS_BUFFER_TOO_SMALL = 5,
  TUGS_STATUS_PANIC = 6,
} TugsStatus;

/**
 * Opaque model handle.
 */
typedef struct TugsModel TugsModel;

typedef struct TugsCompressionStats {
  uint64_t dense_params;
  uint64_t compressed_params;
  double reduction_fraction;
} TugsCompressionStats;

typedef struct TugsModelInfo {
  uint64_t num_gaussians;
  uint64_t num_attributes;
  uint64_t rank;
  /**
   * Factor entries plus the medium parameters.
   */
  uint64_t parameter_count;
  double gamma_inf[3];
} TugsModelInfo;

/**
 * Pinhole camera; `world_to_camera` is a row-major 4×4 rigid transform in
 * an OpenCV frame (+x right, +y down, +z forward).
 */
typedef struct TugsCamera {
  uint32_t width;
  uint32_t height;
  double fx;
  double fy;
  double cx;
  double cy;
  double world_to_camera[16];
} TugsCamera;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *tugs_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tugs_version(void);

/**
 * Parameter counts for `n` Gaussians with `m` attributes at rank `rank`.
 *
 * # Safety
 * `out` must be a valid pointer to writable memory.
 */
enum TugsStatus tugs_compression_stats(uint64_t n,
                                       uint64_t m,
                                       uint64_t rank,
                                       struct TugsCompressionStats *out);

/**
 * Load a checkpoint file into a new handle stored in `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TugsStatus tugs_model_load(const char *path, struct TugsModel **out);

/**
 * Write the model to `path` atomically.
 *
 * # Safety
 * `model` must come from [`tugs_model_load`]; `path` must be NUL-terminated.
 */
enum TugsStatus tugs_model_save(const struct TugsModel *model, const char *path);

/**
 * Release a handle. NULL is ignored.
 *
 * # Safety
 * `model` must come from [`tugs_model_load`] and not be used afterwards.
 */
void tugs_model_free(struct TugsModel *model);

/**
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum TugsStatus tugs_model_info(const struct TugsModel *model, struct TugsModelInfo *out);

/**
 * Render `kind` for `camera` into `rgb`, an interleaved row-major buffer of
 * at least `width * height * 3` floats.
 *
 * # Safety
 * `model` must be a live handle, `camera` valid, and `rgb` writable for
 * `len` floats.
 */
enum TugsStatus tugs_model_render(const struct TugsModel *model,
                                  const struct TugsCamera *camera,
                                  enum TugsImageKind kind,
                                  float *rgb,
                                  size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TUGS_H */
