#ifndef MIGGT_H
#define MIGGT_H

/* Generated by cbindgen from src/lib.rs; edits are overwritten on build. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  MIGGT_STATUS_OK = 0,
  MIGGT_STATUS_NULL_ARGUMENT = 1,
  MIGGT_STATUS_INVALID_ARGUMENT = 2,
  MIGGT_STATUS_IO = 3,
  MIGGT_STATUS_FORMAT = 4,
  MIGGT_STATUS_CONFIG = 5,
  MIGGT_STATUS_DATA = 6,
  MIGGT_STATUS_NUMERIC = 7,
  MIGGT_STATUS_BUFFER_TOO_SMALL = 8,
  MIGGT_STATUS_PANIC = 9,
} MiggtStatus;

typedef enum {
  MIGGT_SPLIT_VALID = 0,
  MIGGT_SPLIT_TEST = 1,
} MiggtSplit;

/**
 * Opaque to C callers.
 */
typedef struct MiggtSession MiggtSession;

typedef struct {
  double recall_at_10;
  double recall_at_20;
  double ndcg_at_10;
  double ndcg_at_20;
  uint64_t users_evaluated;
} MiggtMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *miggt_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *miggt_version(void);

/**
 * Loads the run config at `config_path`, its dataset and split, and
 * initializes a model. `*out` receives the session, or null on failure.
 *
 * # Safety
 * `config_path` must be a NUL-terminated string; `out` must be writable.
 */
MiggtStatus miggt_session_open(const char *config_path, MiggtSession **out);

/**
 * Releases a session. Null is ignored.
 *
 * # Safety
 * `session` must come from [`miggt_session_open`] and not be used afterwards.
 */
void miggt_session_free(MiggtSession *session);

/**
 * Trains from a fresh initialization with early stopping and keeps the
 * best-validation parameters. `best_epoch` (optional) receives the 1-based
 * best epoch, or 0 when no epoch ran.
 *
 * # Safety
 * `session` must be live; `best_epoch` null or writable.
 */
MiggtStatus miggt_session_train(MiggtSession *session, uint32_t *best_epoch);

/**
 * # Safety
 * `session` must be live; `path` NUL-terminated.
 */
MiggtStatus miggt_session_save_params(MiggtSession *session, const char *path);

/**
 * Replaces the model's parameters with those in a parameter file; names
 * and shapes must match.
 *
 * # Safety
 * `session` must be live; `path` NUL-terminated.
 */
MiggtStatus miggt_session_load_params(MiggtSession *session, const char *path);

/**
 * Scores the current model on one split.
 *
 * # Safety
 * `session` must be live; `out` writable.
 */
MiggtStatus miggt_session_evaluate(MiggtSession *session, MiggtSplit split, MiggtMetrics *out);

/**
 * Number of users, or 0 for a null session.
 *
 * # Safety
 * `session` must be null or live.
 */
size_t miggt_session_num_users(const MiggtSession *session);

/**
 * Number of items, or 0 for a null session.
 *
 * # Safety
 * `session` must be null or live.
 */
size_t miggt_session_num_items(const MiggtSession *session);

/**
 * Representation width, or 0 for a null session.
 *
 * # Safety
 * `session` must be null or live.
 */
size_t miggt_session_dim(const MiggtSession *session);

/**
 * Copies a user's final representation into `buf`, which must hold at
 * least [`miggt_session_dim`] values.
 *
 * # Safety
 * `session` must be live; `buf` must have room for `len` doubles.
 */
MiggtStatus miggt_session_user_embedding(MiggtSession *session,
                                         size_t user,
                                         double *buf,
                                         size_t len);

/**
 * Writes up to `k` item indices, best first, skipping the user's training
 * items. `written` receives how many were stored.
 *
 * # Safety
 * `session` must be live; `items` must have room for `k` entries; `written`
 * writable.
 */
MiggtStatus miggt_session_recommend(MiggtSession *session,
                                    size_t user,
                                    size_t k,
                                    size_t *items,
                                    size_t *written);

/**
 * Copies the external id of `item` as a NUL-terminated string. When `cap`
 * is too small nothing is copied, `needed` (optional) receives the required
 * size including the terminator, and `MIGGT_STATUS_BUFFER_TOO_SMALL` is
 * returned.
 *
 * # Safety
 * `session` must be live; `buf` must have room for `cap` bytes; `needed`
 * null or writable.
 */
MiggtStatus miggt_session_item_id(const MiggtSession *session,
                                  size_t item,
                                  char *buf,
                                  size_t cap,
                                  size_t *needed);

/**
 * Propagation coefficients for `(alpha, beta, k)`: `k + 1` values written to
 * `out`, which must hold at least that many.
 *
 * # Safety
 * `out` must have room for `len` doubles.
 */
MiggtStatus miggt_mgdn_coefficients(double alpha, double beta, size_t k, double *out, size_t len);

/**
 * NDCG@k of a ranked list against a set of relevant items (any order).
 *
 * # Safety
 * `ranked` and `truth` must point to `n_ranked` and `n_truth` entries;
 * `out` writable.
 */
MiggtStatus miggt_ndcg_at_k(const size_t *ranked,
                            size_t n_ranked,
                            const size_t *truth,
                            size_t n_truth,
                            size_t k,
                            double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MIGGT_H */
