#ifndef PROMOGEN_H
#define PROMOGEN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum PmgStatus {
  PMG_STATUS_OK = 0,
  PMG_STATUS_NULL_POINTER = 1,
  PMG_STATUS_INVALID_ARGUMENT = 2,
  PMG_STATUS_INFEASIBLE = 3,
  PMG_STATUS_IO = 4,
  PMG_STATUS_FORMAT = 5,
  PMG_STATUS_VERSION = 6,
  PMG_STATUS_CHECKSUM = 7,
  PMG_STATUS_BUFFER_TOO_SMALL = 8,
  PMG_STATUS_OVERFLOW = 9,
  PMG_STATUS_NON_FINITE = 10,
  PMG_STATUS_PANIC = 11,
} PmgStatus;

/**
 * A loaded checkpoint ready for sampling.
 */
typedef struct PmgModel PmgModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread; empty after a success.
 * The pointer stays valid until the next call into this library on the same thread.
 */
const char *pmg_last_error_message(void);

/**
 * Library version as a NUL-terminated string with static lifetime.
 */
const char *pmg_version(void);

/**
 * Number of valid anchor placements for `(n, f_n, f_s)`.
 * Returns `Overflow` when the count does not fit in 64 bits.
 *
 * # Safety
 * `out` must be null or point to writable memory for one `uint64_t`.
 */
enum PmgStatus pmg_fm_count_valid(size_t n, size_t f_n, size_t f_s, uint64_t *out);

/**
 * Draws `f_n` sorted anchor positions in `[0, n)` with consecutive gaps of at least `f_s + 1`.
 *
 * # Safety
 * `out` must be null or point to `out_len` writable `size_t` values.
 */
enum PmgStatus pmg_fm_sample(size_t n,
                             size_t f_n,
                             size_t f_s,
                             uint64_t seed,
                             size_t *out,
                             size_t out_len);

/**
 * Minimum anchor count for curriculum `stage` (1-based) out of `e_stage` stages.
 *
 * # Safety
 * `out` must be null or point to one writable `size_t`.
 */
enum PmgStatus pmg_k_min_for_stage(size_t stage, size_t e_stage, size_t *out);

/**
 * Loads a checkpoint file. On success `*out` receives a handle owned by the caller.
 *
 * # Safety
 * `path` must be null or a NUL-terminated string; `out` must be null or writable.
 */
enum PmgStatus pmg_model_load(const char *path, struct PmgModel **out);

/**
 * Releases a handle from [`pmg_model_load`]. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void pmg_model_free(struct PmgModel *model);

/**
 * Per-frame feature width `D` of the model's motions (0 for a null handle).
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t pmg_model_feature_dim(const struct PmgModel *model);

/**
 * Anchor pose width of the model (0 for a null handle).
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t pmg_model_anchor_dim(const struct PmgModel *model);

/**
 * Samples one motion of `frames` frames into `out` (row-major, `frames * D` doubles).
 *
 * `trajectory` is null or `frames * 3` row-major pelvis positions.
 * `anchor_positions` and `anchor_poses` are null when `anchor_count` is 0;
 * otherwise they hold strictly increasing frame indices and `anchor_count * A`
 * row-major poses, where `A` is [`pmg_model_anchor_dim`].
 * `steps == 0` keeps the checkpoint's sampler step count.
 *
 * # Safety
 * All non-null pointers must reference at least the stated number of elements.
 */
enum PmgStatus pmg_model_sample(const struct PmgModel *model,
                                size_t frames,
                                const double *trajectory,
                                const size_t *anchor_positions,
                                const double *anchor_poses,
                                size_t anchor_count,
                                size_t steps,
                                uint64_t seed,
                                double *out,
                                size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PROMOGEN_H */
