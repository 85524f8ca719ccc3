#ifndef SHADOWPIPE_H
#define SHADOWPIPE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum SpStatus {
  SP_STATUS_OK = 0,
  SP_STATUS_NULL_ARGUMENT = 1,
  SP_STATUS_INVALID_UTF8 = 2,
  SP_STATUS_INVALID_ARGUMENT = 3,
  SP_STATUS_INVALID_PLAN = 4,
  SP_STATUS_IO = 5,
  SP_STATUS_NOT_FOUND = 6,
  SP_STATUS_NOT_READY = 7,
  SP_STATUS_STALE = 8,
  SP_STATUS_ENGINE = 9,
  SP_STATUS_PANIC = 10,
} SpStatus;

/**
 * A loaded corpus.
 */
typedef struct SpDataset SpDataset;

/**
 * An open session: plan, latest run and suggestions.
 */
typedef struct SpSession SpSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *sp_last_error(void);

/**
 * Static name of a status code.
 */
const char *sp_status_name(enum SpStatus status);

/**
 * Generates the default synthetic corpus with `seed`.
 *
 * # Safety
 * `out` must be a valid pointer to write the handle to.
 */
enum SpStatus sp_dataset_generate(uint64_t seed, struct SpDataset **out);

/**
 * Loads a corpus directory written by `gen-corpus`.
 *
 * # Safety
 * `dir` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SpStatus sp_dataset_load(const char *dir, struct SpDataset **out);

/**
 * # Safety
 * `dataset` must come from `sp_dataset_*` and not be used afterwards.
 * Null is ignored.
 */
void sp_dataset_free(struct SpDataset *dataset);

/**
 * Executes `plan` (JSON text, or `rag` / `train`) on `dataset` and opens a
 * session. The session keeps its own reference to the data.
 *
 * # Safety
 * `dataset` must be a live handle, `plan` NUL-terminated, `out` valid.
 */
enum SpStatus sp_session_open(const struct SpDataset *dataset,
                              const char *plan,
                              struct SpSession **out);

/**
 * # Safety
 * `session` must come from `sp_session_open` and not be used afterwards.
 * Null is ignored.
 */
void sp_session_free(struct SpSession *session);

/**
 * Accuracy of the session's current run.
 *
 * # Safety
 * `session` must be a live handle and `out` valid.
 */
enum SpStatus sp_session_accuracy(const struct SpSession *session, double *out);

/**
 * Runs shadow pipelines: `all`, or a comma-separated list of `slices`,
 * `label-errors`, `data-errors`. Blocks until they finish.
 *
 * # Safety
 * `session` must be a live handle and `shadows` NUL-terminated.
 */
enum SpStatus sp_session_analyze(struct SpSession *session, const char *shadows);

/**
 * Ranked suggestions as a JSON array.
 *
 * # Safety
 * `session` must be a live handle and `out` valid.
 */
enum SpStatus sp_session_suggestions_json(const struct SpSession *session, char **out);

/**
 * Applies a ready suggestion; writes the outcome as JSON to `out` when it
 * is not null.
 *
 * # Safety
 * `session` must be a live handle, `id` NUL-terminated, `out` null or valid.
 */
enum SpStatus sp_session_apply(struct SpSession *session, const char *id, char **out);

/**
 * # Safety
 * `session` must be a live handle and `id` NUL-terminated.
 */
enum SpStatus sp_session_dismiss(struct SpSession *session, const char *id);

/**
 * Replaces the plan, maintaining the run incrementally where possible;
 * writes the maintenance report as JSON to `out` when it is not null.
 *
 * # Safety
 * `session` must be a live handle, `plan` NUL-terminated, `out` null or
 * valid.
 */
enum SpStatus sp_session_update_plan(struct SpSession *session, const char *plan, char **out);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void sp_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SHADOWPIPE_H */
