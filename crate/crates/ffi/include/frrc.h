#ifndef FRRC_H
#define FRRC_H

/* Generated with cbindgen from crates/ffi/src/lib.rs (see cbindgen.toml). */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum FrrcStatus {
  FRRC_STATUS_OK = 0,
  /**
   * A required pointer was null.
   */
  FRRC_STATUS_NULL_POINTER = 1,
  /**
   * Bad sizes, shapes or values passed by the caller.
   */
  FRRC_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Unreadable or malformed file or buffer.
   */
  FRRC_STATUS_DATA = 3,
  /**
   * The computation produced non-finite values.
   */
  FRRC_STATUS_NUMERIC = 4,
  /**
   * An output buffer is shorter than required.
   */
  FRRC_STATUS_BUFFER_TOO_SMALL = 5,
  /**
   * An internal panic was caught at the boundary.
   */
  FRRC_STATUS_INTERNAL = 6,
} FrrcStatus;

/**
 * Opaque trained model.
 */
typedef struct FrrcModel FrrcModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *frrc_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *frrc_version(void);

/**
 * Loads a checkpoint file into a new handle written to `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
FrrcStatus frrc_model_load(const char *path, FrrcModel **out);

/**
 * Decodes checkpoint bytes into a new handle written to `*out`.
 *
 * # Safety
 * `bytes` must point to `len` readable bytes and `out` must be writable.
 */
FrrcStatus frrc_model_from_bytes(const uint8_t *bytes, size_t len, FrrcModel **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void frrc_model_free(FrrcModel *model);

/**
 * Feature width the model expects, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t frrc_model_input_width(const FrrcModel *model);

/**
 * Predicts the density map of `frames × width` features. Writes `frames`
 * values to `density_out` (capacity `density_len`) and the count to
 * `*count_out`; either output may be null to skip it.
 *
 * # Safety
 * `model` must be a live handle, `features` must hold `frames * width`
 * values and `density_out` must have room for `density_len` values.
 */
FrrcStatus frrc_model_predict(const FrrcModel *model,
                              const double *features,
                              size_t frames,
                              size_t width,
                              double *density_out,
                              size_t density_len,
                              double *count_out);

/**
 * Ground-truth density of `n` repetition intervals `[starts[i], ends[i]]`
 * on a video of `frames` frames, written to `out` (capacity `out_len`).
 *
 * # Safety
 * `starts` and `ends` must hold `n` values; `out` must have room for
 * `out_len` values.
 */
FrrcStatus frrc_ground_truth(const size_t *starts,
                             const size_t *ends,
                             size_t n,
                             size_t frames,
                             double *out,
                             size_t out_len);

/**
 * MAE and OBO of `n` (true, predicted) count pairs. Videos with a true
 * count of zero are left out of MAE but kept in OBO.
 *
 * # Safety
 * `true_counts` and `predicted` must hold `n` values; outputs must be
 * writable.
 */
FrrcStatus frrc_evaluate_counts(const double *true_counts,
                                const double *predicted,
                                size_t n,
                                double *mae_out,
                                double *obo_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FRRC_H */
