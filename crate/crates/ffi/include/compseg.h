#ifndef COMPSEG_H
#define COMPSEG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CsStatus {
  CS_STATUS_OK = 0,
  CS_STATUS_NULL_POINTER = 1,
  CS_STATUS_INVALID_ARGUMENT = 2,
  CS_STATUS_SHAPE_MISMATCH = 3,
  CS_STATUS_IO = 4,
  CS_STATUS_CHECKPOINT = 5,
  /**
   * The model has no kernel bank (a baseline checkpoint).
   */
  CS_STATUS_NO_KERNELS = 6,
  CS_STATUS_INTERNAL = 7,
  CS_STATUS_PANIC = 8,
} CsStatus;

/**
 * Opaque handle to a loaded checkpoint.
 */
typedef struct CsModel CsModel;

typedef struct CsModelInfo {
  size_t height;
  size_t width;
  /**
   * Foreground classes; label grids hold values `0..=num_classes`.
   */
  uint8_t num_classes;
  /**
   * Zero for baseline checkpoints.
   */
  size_t num_kernels;
  size_t feature_height;
  size_t feature_width;
} CsModelInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *cs_last_error(void);

/**
 * Dice similarity (percent) of `class_id` between two label grids. Both
 * grids empty for the class gives 100.
 *
 * # Safety
 * `pred` and `target` must point to `height * width` bytes; `out` to one
 * double.
 */
enum CsStatus cs_dsc(const uint8_t *pred,
                     const uint8_t *target,
                     size_t height,
                     size_t width,
                     uint8_t num_classes,
                     uint8_t class_id,
                     double *out);

/**
 * Average symmetric surface distance in millimetres. `*defined` is false
 * (and `*out` NaN) when either grid lacks the class.
 *
 * # Safety
 * As [`cs_dsc`]; `defined` must point to one bool.
 */
enum CsStatus cs_assd(const uint8_t *pred,
                      const uint8_t *target,
                      size_t height,
                      size_t width,
                      uint8_t num_classes,
                      uint8_t class_id,
                      double spacing_row_mm,
                      double spacing_col_mm,
                      uint32_t neighbours,
                      double *out,
                      bool *defined);

/**
 * Copies `pred` to `out`, keeping only the largest connected component of
 * `class_id` (earliest in raster order on ties).
 *
 * # Safety
 * `pred` and `out` must each hold `height * width` bytes.
 */
enum CsStatus cs_largest_component(const uint8_t *pred,
                                   size_t height,
                                   size_t width,
                                   uint8_t num_classes,
                                   uint8_t class_id,
                                   uint32_t neighbours,
                                   uint8_t *out);

/**
 * Kernel activations of `num_positions` feature vectors. `kernels` is
 * `num_kernels x channels` and is rescaled to unit rows; features are
 * normalized per position. `out` receives `num_positions x num_kernels`
 * values, each row summing to 1 when `normalize` is set.
 *
 * # Safety
 * Pointers must hold the stated number of doubles.
 */
enum CsStatus cs_vmf_activations(const double *kernels,
                                 size_t num_kernels,
                                 size_t channels,
                                 double sigma,
                                 const double *features,
                                 size_t num_positions,
                                 bool normalize,
                                 double *out);

/**
 * Loads a checkpoint. Free the handle with [`cs_model_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must point to a handle slot.
 */
enum CsStatus cs_model_load(const char *path, struct CsModel **out);

/**
 * # Safety
 * `model` must come from [`cs_model_load`] and not be used afterwards.
 * Null is ignored.
 */
void cs_model_free(struct CsModel *model);

/**
 * # Safety
 * `model` must be a live handle; `out` must point to a `CsModelInfo`.
 */
enum CsStatus cs_model_info(const struct CsModel *model, struct CsModelInfo *out);

/**
 * Segments one target-domain image into `height * width` labels.
 *
 * # Safety
 * `pixels` must hold `height * width` floats and `out_labels` as many bytes.
 */
enum CsStatus cs_model_segment(const struct CsModel *model,
                               const float *pixels,
                               size_t height,
                               size_t width,
                               uint8_t *out_labels);

/**
 * Kernel activations of one image, `num_kernels x feature_height x
 * feature_width` (see [`CsModelInfo`]); `out_len` must equal that product.
 *
 * # Safety
 * `pixels` must hold `height * width` floats and `out` `out_len` floats.
 */
enum CsStatus cs_model_composition(const struct CsModel *model,
                                   const float *pixels,
                                   size_t height,
                                   size_t width,
                                   bool normalize,
                                   float *out,
                                   size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COMPSEG_H */
