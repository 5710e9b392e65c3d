#ifndef ILSIM_H
#define ILSIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IlsimStatus {
  ILSIM_STATUS_OK = 0,
  ILSIM_STATUS_NULL_POINTER = 1,
  ILSIM_STATUS_INVALID_ARGUMENT = 2,
  ILSIM_STATUS_DOMAIN = 3,
  ILSIM_STATUS_CONTRADICTION = 4,
  ILSIM_STATUS_INFEASIBLE = 5,
  ILSIM_STATUS_CONFIG = 6,
  ILSIM_STATUS_RUN_ABORTED = 7,
  ILSIM_STATUS_IO = 8,
  ILSIM_STATUS_BUFFER_TOO_SMALL = 9,
  ILSIM_STATUS_PANIC = 10,
} IlsimStatus;

// A normalized belief over a space.
typedef struct IlsimBelief IlsimBelief;

// A finite hypothesis space.
typedef struct IlsimSpace IlsimSpace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message on this thread into `buf` (NUL
// terminated, truncated to `len`) and returns its full length in bytes.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t ilsim_last_error(char *buf, size_t len);

// Library version as a static NUL-terminated string.
const char *ilsim_version(void);

// The 256 mappings from four objects to four two-bit messages.
//
// # Safety
// `out` must be a valid pointer to write the handle into.
enum IlsimStatus ilsim_signal_space_new(struct IlsimSpace **out);

// Rule space over `objects` objects (3^objects rules).
//
// # Safety
// `out` must be a valid pointer to write the handle into.
enum IlsimStatus ilsim_acre_space_new(size_t objects, struct IlsimSpace **out);

// # Safety
// `space` must be null or a handle from an `ilsim_*_space_new` call that
// has not been freed.
void ilsim_space_free(struct IlsimSpace *space);

// # Safety
// `space` must be a live handle and `hypotheses`, `inputs`, `outputs`
// valid pointers.
enum IlsimStatus ilsim_space_shape(const struct IlsimSpace *space,
                                   size_t *hypotheses,
                                   size_t *inputs,
                                   size_t *outputs);

// Uniform belief over `space`.
//
// # Safety
// `space` must be a live handle and `out` a valid pointer.
enum IlsimStatus ilsim_belief_uniform(const struct IlsimSpace *space, struct IlsimBelief **out);

// Coding-length prior over the signal space with divisor `c`.
//
// # Safety
// `out` must be a valid pointer.
enum IlsimStatus ilsim_belief_coding_prior(double c, struct IlsimBelief **out);

// Belief from `len` non-negative weights, normalized.
//
// # Safety
// `space` must be a live handle, `weights` must point to `len` doubles and
// `out` must be valid.
enum IlsimStatus ilsim_belief_from_weights(const struct IlsimSpace *space,
                                           const double *weights,
                                           size_t len,
                                           struct IlsimBelief **out);

// # Safety
// `belief` must be null or a live handle.
void ilsim_belief_free(struct IlsimBelief *belief);

// Copies the probabilities into `buf`, which must hold every hypothesis.
//
// # Safety
// `belief` must be a live handle and `buf` point to `len` doubles.
enum IlsimStatus ilsim_belief_probs(const struct IlsimBelief *belief, double *buf, size_t len);

// Entropy in nats.
//
// # Safety
// `belief` must be a live handle and `out` valid.
enum IlsimStatus ilsim_belief_entropy(const struct IlsimBelief *belief, double *out);

// Posterior after `n` examples `(inputs[i], outputs[i])` under the noise
// level `epsilon`. Writes a new handle; `prior` is left untouched.
//
// # Safety
// Handles must be live, `inputs` and `outputs` must point to `n` values
// each (they may be null when `n` is 0), and `out` must be valid.
enum IlsimStatus ilsim_posterior_update(const struct IlsimBelief *prior,
                                        const struct IlsimSpace *space,
                                        const size_t *inputs,
                                        const size_t *outputs,
                                        size_t n,
                                        double epsilon,
                                        struct IlsimBelief **out);

// Runs a TOML experiment config and writes its artifacts to `out_dir`.
// Relative paths in the config resolve against `base_dir`.
//
// # Safety
// All three arguments must be NUL-terminated UTF-8 strings.
enum IlsimStatus ilsim_run_config(const char *config_toml,
                                  const char *base_dir,
                                  const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ILSIM_H */
