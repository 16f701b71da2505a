#ifndef PREFELICIT_H
#define PREFELICIT_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every call.
typedef enum PeStatus {
  PE_STATUS_OK = 0,
  // Null pointer, wrong buffer length, malformed JSON or invalid configuration.
  PE_STATUS_INVALID_ARGUMENT = 1,
  // The session cannot perform the request in its current state.
  PE_STATUS_INVALID_STATE = 2,
  // Numerical or other internal failure.
  PE_STATUS_INTERNAL = 3,
  // A panic was caught at the boundary; the handle should be freed.
  PE_STATUS_PANIC = 4,
} PeStatus;

// Lifecycle state of a session.
typedef enum PeSessionStatus {
  PE_SESSION_STATUS_AWAITING_RESPONSE = 0,
  PE_SESSION_STATUS_CONVERGED = 1,
  PE_SESSION_STATUS_MAX_STEPS_REACHED = 2,
} PeSessionStatus;

// Opaque session handle.
typedef struct PeSession PeSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Create a session with default settings and `dims` parameters.
//
// # Safety
// `out` must be valid for writing one pointer.
enum PeStatus pe_session_new(size_t dims, uint64_t seed, struct PeSession **out);

// Create a session from a JSON configuration; absent fields take defaults.
//
// # Safety
// `config_json` must be a NUL-terminated string; `out` must be valid for writing one pointer.
enum PeStatus pe_session_new_with_config(const char *config_json,
                                         uint64_t seed,
                                         struct PeSession **out);

// Release a session. Null is ignored.
//
// # Safety
// `s` must come from a constructor of this library and not be used afterwards.
void pe_session_free(struct PeSession *s);

// Number of preference parameters `D`.
//
// # Safety
// `s` must be a live handle and `out` valid for writing.
enum PeStatus pe_session_dims(const struct PeSession *s, size_t *out);

// The pending trial mapped to the original `[0, 1]^D` domain.
//
// # Safety
// `x_ref` and `x_alt` must each hold `len` doubles, with `len` equal to the session's dims.
enum PeStatus pe_session_current_trial(const struct PeSession *s,
                                       double *x_ref,
                                       double *x_alt,
                                       size_t len);

// Answer the pending trial: `1` prefers the alternative, `0` the reference.
//
// # Safety
// `s` must be a live handle not used concurrently.
enum PeStatus pe_session_submit(struct PeSession *s, uint8_t r);

// Point estimate of the optimum and the sensitivities. Requires one answered trial.
//
// # Safety
// `theta` must hold `len` doubles; `lambda` may be null, otherwise it must hold `len` doubles.
enum PeStatus pe_session_estimate(const struct PeSession *s,
                                  double *theta,
                                  double *lambda,
                                  size_t len);

// Remaining system uncertainty; `InvalidState` before the first designed trial.
//
// # Safety
// `s` must be a live handle and `out` valid for writing.
enum PeStatus pe_session_rsu(const struct PeSession *s, double *out);

// # Safety
// `s` must be a live handle and `out` valid for writing.
enum PeStatus pe_session_status(const struct PeSession *s, enum PeSessionStatus *out);

// Index of the pending trial (1-based), or the number of answered trials once finished.
//
// # Safety
// `s` must be a live handle and `out` valid for writing.
enum PeStatus pe_session_step(const struct PeSession *s, size_t *out);

// Full session (seed, configuration and state) as JSON. Free with [`pe_string_free`].
//
// # Safety
// `s` must be a live handle and `out` valid for writing one pointer.
enum PeStatus pe_session_to_json(const struct PeSession *s, char **out);

// Release a string returned by this library. Null is ignored.
//
// # Safety
// `p` must come from this library and not be used afterwards.
void pe_string_free(char *p);

// Message of the last failed call on this thread, or null. Valid until the
// next call into this library on the same thread.
const char *pe_last_error_message(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PREFELICIT_H */
