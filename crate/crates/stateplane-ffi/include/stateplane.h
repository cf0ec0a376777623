#ifndef STATEPLANE_H
#define STATEPLANE_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum SpStatus {
  SpOk = 0,
  SpInvalidArgument = 1,
  SpPolicyDenied = 2,
  SpGateRejected = 3,
  SpNotFound = 4,
  SpBudgetExhausted = 5,
  SpAuditFailure = 6,
  SpStorageFailure = 7,
  SpInternal = 8,
} SpStatus;

/**
 * Opaque handle to one state plane instance. Not thread-safe; callers must
 * serialize access per handle.
 */
typedef struct SpPlane SpPlane;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates an in-memory plane. Returns null on error (see `sp_last_error`).
 *
 * # Safety
 * `config_json` and `policy_json` must be valid NUL-terminated C strings.
 */
struct SpPlane *sp_plane_new(const char *config_json, const char *policy_json);

/**
 * Opens (or creates) a persistent plane rooted at `store_dir`. Returns null
 * on error.
 *
 * # Safety
 * All arguments must be valid NUL-terminated C strings.
 */
struct SpPlane *sp_plane_open(const char *store_dir,
                              const char *config_json,
                              const char *policy_json);

/**
 * Releases a plane handle. Null is a no-op.
 *
 * # Safety
 * `plane` must be null or a pointer returned by `sp_plane_new`/`sp_plane_open`
 * that has not been freed yet.
 */
void sp_plane_free(struct SpPlane *plane);

/**
 * Frees a string returned through an output parameter. Null is a no-op.
 *
 * # Safety
 * `s` must be null or a string produced by this library.
 */
void sp_string_free(char *s);

/**
 * Returns the thread-local message for the last failure, or null.
 * The pointer is valid until the next failing call on this thread.
 */
const char *sp_last_error(void);

/**
 * Retrieves and assembles a bounded, policy-filtered context. On success
 * writes a JSON response to `*out` (free with `sp_string_free`).
 *
 * # Safety
 * `plane` must be a live handle; string arguments must be valid
 * NUL-terminated C strings; `out` must be a valid pointer.
 */
enum SpStatus sp_prepare_context(struct SpPlane *plane,
                                 const char *principal_json,
                                 const char *request_json,
                                 char **out);

/**
 * Records an interaction outcome, running segmentation, salience scoring,
 * and the write gate. On success writes a JSON response to `*out`.
 *
 * # Safety
 * Same contract as `sp_prepare_context`.
 */
enum SpStatus sp_commit_outcome(struct SpPlane *plane,
                                const char *principal_json,
                                const char *request_json,
                                char **out);

/**
 * Applies exponential decay and prunes objects below the strength floor.
 *
 * # Safety
 * Same contract as `sp_prepare_context`.
 */
enum SpStatus sp_decay_sweep(struct SpPlane *plane, const char *principal_json, char **out);

/**
 * Physically erases every object under a user-family scope.
 *
 * # Safety
 * Same contract as `sp_prepare_context`.
 */
enum SpStatus sp_forget_scope(struct SpPlane *plane,
                              const char *principal_json,
                              const char *scope,
                              char **out);

/**
 * Fetches one state object by id under read policy.
 *
 * # Safety
 * Same contract as `sp_prepare_context`.
 */
enum SpStatus sp_get_state(struct SpPlane *plane,
                           const char *principal_json,
                           const char *id,
                           char **out);

/**
 * Verifies the audit hash chain; writes the verification report to `*out`.
 *
 * # Safety
 * `plane` must be a live handle and `out` a valid pointer.
 */
enum SpStatus sp_verify_audit(struct SpPlane *plane, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STATEPLANE_H */
