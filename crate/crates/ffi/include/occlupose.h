#ifndef OCCLUPOSE_H
#define OCCLUPOSE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OpStatus {
  OP_STATUS_OK = 0,
  OP_STATUS_NULL_POINTER = 1,
  OP_STATUS_INVALID_ARGUMENT = 2,
  OP_STATUS_IO = 3,
  /**
   * Malformed input data (XML, JSON, image, manifest).
   */
  OP_STATUS_FORMAT = 4,
  OP_STATUS_OUT_OF_BOUNDS = 5,
  /**
   * Non-positive depth, singular transform or divergence.
   */
  OP_STATUS_NUMERIC = 6,
  OP_STATUS_EMPTY_LIBRARY = 7,
  OP_STATUS_BUFFER_TOO_SMALL = 8,
  OP_STATUS_PANIC = 9,
} OpStatus;

/**
 * Occluder library loaded from disk. Free with [`op_library_free`].
 */
typedef struct OpLibrary OpLibrary;

typedef struct OpAugmentOptions {
  uint64_t seed;
  double p_occ;
  double focal;
  /**
   * Side of the square output crop.
   */
  uint32_t out_size;
  /**
   * Fraction of the crop side covered by the longer box side.
   */
  double fill;
} OpAugmentOptions;

typedef struct OpBox {
  double x;
  double y;
  double w;
  double h;
} OpBox;

typedef struct OpAugmentResult {
  bool occluded;
  size_t occluder_count;
  double covered_fraction;
  double rotation_deg;
  bool hflip;
  /**
   * Zoom `s` of the final crop camera.
   */
  double scale;
} OpAugmentResult;

typedef struct OpCropIntrinsics {
  double focal;
  double scale;
  double correction;
  double width;
  double height;
} OpCropIntrinsics;

typedef struct OpGridConfig {
  uint32_t out_width;
  uint32_t out_height;
  size_t heatmap_width;
  size_t heatmap_height;
  size_t depth_bins;
  size_t abs_depth_bins;
  double rel_depth_range_mm;
  double abs_depth_range_mm;
} OpGridConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *op_version(void);

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next call into this library from the same thread.
 */
const char *op_last_error_message(void);

/**
 * Loads a library directory written by `occlupose ingest-voc`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum OpStatus op_library_load(const char *path, struct OpLibrary **out);

/**
 * # Safety
 * `lib` must come from [`op_library_load`] and not be used afterwards. NULL is ignored.
 */
void op_library_free(struct OpLibrary *lib);

/**
 * # Safety
 * `lib` must be a live handle; `out_len` must be writable.
 */
enum OpStatus op_library_len(const struct OpLibrary *lib, size_t *out_len);

/**
 * Size in pixels of cutout `index`.
 *
 * # Safety
 * `lib` must be a live handle; `out_width` and `out_height` must be writable.
 */
enum OpStatus op_library_object_size(const struct OpLibrary *lib,
                                     size_t index,
                                     uint32_t *out_width,
                                     uint32_t *out_height);

/**
 * Defaults: seed 0, p_occ 0.5, focal 1500, 256 px crop, fill 0.9.
 */
struct OpAugmentOptions op_augment_options_default(void);

/**
 * Crops the person in `bbox`, applies the seeded geometric, occlusion and
 * appearance augmentation and writes an `out_size × out_size` RGB8 crop.
 *
 * # Safety
 * `rgb` must hold `width * height * 3` bytes; `out_rgb` must hold `out_len`
 * bytes; `frame_id` must be NUL-terminated; `result` may be NULL.
 */
enum OpStatus op_augment_frame(const struct OpLibrary *lib,
                               const uint8_t *rgb,
                               uint32_t width,
                               uint32_t height,
                               const struct OpBox *bbox,
                               const char *frame_id,
                               const struct OpAugmentOptions *options,
                               uint8_t *out_rgb,
                               size_t out_len,
                               struct OpAugmentResult *result);

/**
 * Lifts crop pixel `(x, y)` with relative depth `dz` and root depth `zstar`
 * into camera space (mm), writing three values to `out_xyz`.
 *
 * # Safety
 * `k` must be valid; `out_xyz` must hold three doubles.
 */
enum OpStatus op_back_project(double x,
                              double y,
                              double dz,
                              double zstar,
                              const struct OpCropIntrinsics *k,
                              double *out_xyz);

/**
 * # Safety
 * `point` must hold three doubles, `out_xy` two; `k` must be valid.
 */
enum OpStatus op_project(const double *point, const struct OpCropIntrinsics *k, double *out_xy);

/**
 * 256 px crop, 16×16×16 relative volume, 32 absolute-depth bins.
 */
struct OpGridConfig op_grid_config_default(void);

/**
 * Decodes one backbone output (HWC, joint-major channels) into per-joint
 * crop coordinates, relative depths and the absolute root depth.
 *
 * # Safety
 * `spatial` must hold `height * width * channels` floats, `depth` must hold
 * `depth_len`; `out_xy` needs `2 * joints` doubles and `out_dz` `joints`.
 */
enum OpStatus op_decode(const float *spatial,
                        size_t height,
                        size_t width,
                        size_t channels,
                        const float *depth,
                        size_t depth_len,
                        size_t joints,
                        const struct OpGridConfig *grid,
                        double *out_xy,
                        double *out_dz,
                        double *out_zstar);

/**
 * Root-relative mean per-joint position error of two `joints × 3` poses.
 *
 * # Safety
 * `pred` and `gt` must hold `3 * joints` doubles; `out` must be writable.
 */
enum OpStatus op_mpjpe(const double *pred,
                       const double *gt,
                       size_t joints,
                       size_t root_index,
                       double *out);

/**
 * # Safety
 * `out` must be writable.
 */
enum OpStatus op_triangular_lr(size_t step,
                               double base_lr,
                               double max_lr,
                               size_t period,
                               double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OCCLUPOSE_H */
