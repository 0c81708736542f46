#ifndef PLAIN_MAMBA_H
#define PLAIN_MAMBA_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  PM_STATUS_OK = 0,
  PM_STATUS_NULL_POINTER = 1,
  PM_STATUS_INVALID_ARGUMENT = 2,
  PM_STATUS_CONFIG = 3,
  PM_STATUS_SHAPE = 4,
  PM_STATUS_NUMERICAL = 5,
  PM_STATUS_PARSE = 6,
  PM_STATUS_FORMAT = 7,
  PM_STATUS_MANIFEST = 8,
  PM_STATUS_IO = 9,
  PM_STATUS_BUFFER_TOO_SMALL = 10,
  PM_STATUS_PANIC = 11,
} PmStatus;

/**
 * Opaque model handle: a preset configuration plus its weights.
 */
typedef struct PmModel PmModel;

/**
 * Opaque handle to four scan paths over a grid.
 */
typedef struct PmPathSet PmPathSet;

/**
 * MAC counts of one forward pass.
 */
typedef struct {
  uint64_t token_mixing;
  uint64_t channel_mixing;
  uint64_t other;
  uint64_t total;
  uint64_t peak_bytes;
} PmFlops;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call into this library.
 */
const char *pm_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pm_version(void);

/**
 * Total learnable parameters of a preset (`"L1"`, `"L2"`, `"L3"`, `"toy"`).
 *
 * # Safety
 * `preset` must be a NUL-terminated string; `out` must be writable.
 */
PmStatus pm_count_params(const char *preset, uint64_t *out);

/**
 * MAC counts of a preset at `height × width` pixels.
 *
 * # Safety
 * `preset` must be a NUL-terminated string; `out` must be writable.
 */
PmStatus pm_count_flops(const char *preset, size_t height, size_t width, PmFlops *out);

/**
 * MAC counts of the DeiT-C224 attention baseline.
 *
 * # Safety
 * `out` must be writable.
 */
PmStatus pm_count_flops_attention(size_t height, size_t width, PmFlops *out);

/**
 * Freshly initialized model for a preset.
 *
 * # Safety
 * `preset` must be a NUL-terminated string; `out` must be writable. The
 * handle written to `*out` must be released with [`pm_model_free`].
 */
PmStatus pm_model_init(const char *preset, uint64_t seed, PmModel **out);

/**
 * Loads a `PMWB` weight file, checking it against the preset.
 *
 * # Safety
 * `preset` and `path` must be NUL-terminated strings; `out` must be
 * writable. Release the handle with [`pm_model_free`].
 */
PmStatus pm_model_load(const char *preset, const char *path, PmModel **out);

/**
 * Writes the model's weights; `single_precision` selects `f32` storage.
 *
 * # Safety
 * `model` must be a live handle; `path` a NUL-terminated string.
 */
PmStatus pm_model_save(const PmModel *model, const char *path, bool single_precision);

/**
 * Number of logits [`pm_model_forward`] writes; 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t pm_model_num_classes(const PmModel *model);

/**
 * Classifies an `height × width × 3` row-major image with values in `[0, 1]`.
 *
 * # Safety
 * `model` must be a live handle, `pixels` must point to
 * `height * width * 3` doubles and `logits` to `logits_len` writable doubles.
 */
PmStatus pm_model_forward(const PmModel *model,
                          const double *pixels,
                          size_t height,
                          size_t width,
                          double *logits,
                          size_t logits_len);

/**
 * Releases a model handle. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void pm_model_free(PmModel *model);

/**
 * The four scan paths over an `height × width` grid; `raster` selects the
 * non-continuous baseline.
 *
 * # Safety
 * `out` must be writable. Release the handle with [`pm_paths_free`].
 */
PmStatus pm_paths_new(size_t height, size_t width, bool raster, PmPathSet **out);

/**
 * Cells per path (`height * width`); 0 for a null handle.
 *
 * # Safety
 * `paths` must be null or a live handle.
 */
size_t pm_paths_len(const PmPathSet *paths);

/**
 * Row-major cell index visited at each step of path `path` (0..4).
 *
 * # Safety
 * `paths` must be a live handle and `out` must hold `len` writable values.
 */
PmStatus pm_paths_order(const PmPathSet *paths, size_t path, size_t *out, size_t len);

/**
 * Direction label of each step: 0 right, 1 left, 2 down, 3 up, 4 begin.
 *
 * # Safety
 * `paths` must be a live handle and `out` must hold `len` writable bytes.
 */
PmStatus pm_paths_directions(const PmPathSet *paths, size_t path, uint8_t *out, size_t len);

/**
 * Releases a path-set handle. Null is ignored.
 *
 * # Safety
 * `paths` must be null or a handle not yet freed.
 */
void pm_paths_free(PmPathSet *paths);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PLAIN_MAMBA_H */
