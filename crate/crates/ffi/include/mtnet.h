/* C interface for the mtnet neural SMT feature toolkit. */

#pragma once

/* Generated with cbindgen:0.29.4 */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code of every fallible call.
 */
typedef enum MtStatus {
  MT_STATUS_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  MT_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  MT_STATUS_INVALID_UTF8 = 2,
  /**
   * The output buffer was too small.
   */
  MT_STATUS_BUFFER_TOO_SMALL = 3,
  /**
   * An index argument was out of range.
   */
  MT_STATUS_INDEX_OUT_OF_RANGE = 4,
  MT_STATUS_IO = 5,
  MT_STATUS_PARSE = 6,
  MT_STATUS_VALIDATION = 7,
  MT_STATUS_CONFIG = 8,
  MT_STATUS_BAD_MAGIC = 9,
  MT_STATUS_UNSUPPORTED_VERSION = 10,
  MT_STATUS_TRUNCATED = 11,
  MT_STATUS_WIDTH_MISMATCH = 12,
  MT_STATUS_DIGEST_MISMATCH = 13,
  MT_STATUS_FEATURE_MISMATCH = 14,
  MT_STATUS_MISSING_ALIGNMENT = 15,
  MT_STATUS_EMPTY_SHARD = 16,
  /**
   * A library invariant was violated (defect report).
   */
  MT_STATUS_INTERNAL = 17,
} MtStatus;

/**
 * Opaque trained model handle.
 */
typedef struct MtModel MtModel;

/**
 * Opaque scoring session over one or more models.
 */
typedef struct MtScorer MtScorer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * The message describing the most recent error on this thread. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *mt_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mt_version(void);

/**
 * Load a model file. On success `*out` owns the handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum MtStatus mt_model_load(const char *path, struct MtModel **out);

/**
 * Release a model handle. NULL is a no-op.
 *
 * # Safety
 * `model` must come from [`mt_model_load`] and not be freed twice.
 */
void mt_model_free(struct MtModel *model);

/**
 * Number of tasks (output heads) in the model, or 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
uintptr_t mt_model_task_count(const struct MtModel *model);

/**
 * Copy the name of task `index` into `buf` (NUL-terminated).
 *
 * # Safety
 * `model` must be a live handle; `buf` must hold `cap` writable bytes.
 */
enum MtStatus mt_model_task_name(const struct MtModel *model,
                                 uintptr_t index,
                                 char *buf,
                                 uintptr_t cap);

/**
 * Average log-likelihood of a shard file under the named task head.
 *
 * # Safety
 * `model` must be a live handle; `shard_path` and `task` NUL-terminated
 * strings; `out` a valid pointer.
 */
enum MtStatus mt_model_avg_loglik(const struct MtModel *model,
                                  const char *shard_path,
                                  const char *task,
                                  double *out);

/**
 * Open a scoring session over `count` model files. All models must share
 * vocabularies, and no task may appear twice.
 *
 * # Safety
 * `paths` must point to `count` NUL-terminated strings; `out` must be a
 * valid pointer.
 */
enum MtStatus mt_scorer_new(const char *const *paths, uintptr_t count, struct MtScorer **out);

/**
 * Release a scoring session. NULL is a no-op.
 *
 * # Safety
 * `scorer` must come from [`mt_scorer_new`] and not be freed twice.
 */
void mt_scorer_free(struct MtScorer *scorer);

/**
 * Number of values written by [`mt_scorer_score`]: one per feature head
 * plus one trailing slot for the source-enumerating combined score.
 *
 * # Safety
 * `scorer` must be NULL or a live handle.
 */
uintptr_t mt_scorer_value_count(const struct MtScorer *scorer);

/**
 * Copy the name of value `index` into `buf`. The last value is always
 * `srcen`, the combined score.
 *
 * # Safety
 * `scorer` must be a live handle; `buf` must hold `cap` writable bytes.
 */
enum MtStatus mt_scorer_value_name(const struct MtScorer *scorer,
                                   uintptr_t index,
                                   char *buf,
                                   uintptr_t cap);

/**
 * Score one hypothesis. `src_line` and `hyp_line` are whitespace
 * tokenized; `align_line` holds 0-based `j-i` pairs. Writes
 * [`mt_scorer_value_count`] doubles into `out_values` (the trailing
 * combined slot is NaN when the session lacks the heads to compute it).
 * `self_normalized` nonzero scores raw logits instead of the softmax.
 *
 * # Safety
 * `scorer` must be a live handle, the strings NUL-terminated, and
 * `out_values` must hold `cap` writable doubles.
 */
enum MtStatus mt_scorer_score(const struct MtScorer *scorer,
                              const char *src_line,
                              const char *hyp_line,
                              const char *align_line,
                              int32_t self_normalized,
                              double *out_values,
                              uintptr_t cap);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus
