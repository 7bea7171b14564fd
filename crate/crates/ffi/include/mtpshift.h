#ifndef MTPSHIFT_H
#define MTPSHIFT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Status code returned by every fallible function.
typedef enum MtpStatus {
  MTP_STATUS_OK = 0,
  MTP_STATUS_NULL_POINTER = 1,
  MTP_STATUS_INVALID_ARGUMENT = 2,
  MTP_STATUS_DOMAIN = 3,
  MTP_STATUS_UNDEFINED_RATE = 4,
  MTP_STATUS_SINGLE_CLUSTER = 5,
  MTP_STATUS_IDENTIFICATION = 6,
  MTP_STATUS_IO = 7,
  MTP_STATUS_INTERNAL = 8,
  MTP_STATUS_PANIC = 9,
} MtpStatus;

// A delayed-enactment policy for binary trajectories.
typedef struct MtpDelayPolicy MtpDelayPolicy;

// A point-exposure shift.
typedef struct MtpShift MtpShift;

// Standard error and Wald interval of an estimate.
typedef struct MtpInterval {
  double estimate;
  double se;
  double ci_low;
  double ci_high;
  uintptr_t n_clusters;
} MtpInterval;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Last error message on this thread, or null. The caller owns the string.
char *mtp_last_error_message(void);

// Frees a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void mtp_string_free(char *s);

// Library version as a static string.
const char *mtp_version(void);

// Bounded additive shift: `a + delta2` if `a <= a_max - delta2`, else
// `a + delta1` if `a <= a_max - delta1`, else `a`.
//
// # Safety
// `out` must be a valid pointer.
enum MtpStatus mtp_shift_bounded_new(double delta1,
                                     double delta2,
                                     double a_max,
                                     struct MtpShift **out);

// Unbounded shift `a + delta`.
//
// # Safety
// `out` must be a valid pointer.
enum MtpStatus mtp_shift_additive_new(double delta, struct MtpShift **out);

// # Safety
// `shift` must come from a `mtp_shift_*_new` call and not have been freed.
void mtp_shift_free(struct MtpShift *shift);

// Applies the shift to one exposure value.
//
// # Safety
// `shift` must be a live handle and `out` a valid pointer.
enum MtpStatus mtp_shift_apply(const struct MtpShift *shift, double a, double *out);

// Applies the shift to `n` values. `out` is untouched on error.
//
// # Safety
// `a` and `out` must each hold `n` doubles.
enum MtpStatus mtp_shift_apply_array(const struct MtpShift *shift,
                                     const double *a,
                                     uintptr_t n,
                                     double *out);

// Delay policy over `horizon` steps postponing the first enactment by
// `delay_steps`.
//
// # Safety
// `out` must be a valid pointer.
enum MtpStatus mtp_delay_policy_new(uintptr_t horizon,
                                    uintptr_t delay_steps,
                                    struct MtpDelayPolicy **out);

// # Safety
// `policy` must come from [`mtp_delay_policy_new`] and not have been freed.
void mtp_delay_policy_free(struct MtpDelayPolicy *policy);

// Applies the delay to a monotone 0/1 trajectory of length `n`.
//
// # Safety
// `a` and `out` must each hold `n` bytes.
enum MtpStatus mtp_apply_delay(const struct MtpDelayPolicy *policy,
                               const uint8_t *a,
                               uintptr_t n,
                               uint8_t *out);

// Wald interval `estimate -/+ z * se`.
//
// # Safety
// `lo` and `hi` must be valid pointers.
enum MtpStatus mtp_confidence_interval(double estimate,
                                       double se,
                                       double alpha,
                                       double *lo,
                                       double *hi);

// Cluster-robust standard error of `estimate` from `n` influence-curve
// values and their cluster ids.
//
// # Safety
// `ic` and `clusters` must each hold `n` elements; `out` must be valid.
enum MtpStatus mtp_cluster_robust_se(const double *ic,
                                     const uint64_t *clusters,
                                     uintptr_t n,
                                     double estimate,
                                     double alpha,
                                     struct MtpInterval *out);

// Events per 100,000 people aged 12 and over.
//
// # Safety
// `out` must be a valid pointer.
enum MtpStatus mtp_compute_rate(uint64_t event_count, uint64_t population_12plus, double *out);

// Runs the `[estimate]` section of a TOML run config and returns the
// results document as JSON. Relative paths resolve against the working
// directory.
//
// # Safety
// `config_toml` must be a nul-terminated string and `out_json` a valid
// pointer. The returned string is freed with [`mtp_string_free`].
enum MtpStatus mtp_estimate_json(const char *config_toml, char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MTPSHIFT_H */
