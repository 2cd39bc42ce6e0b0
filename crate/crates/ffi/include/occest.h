#ifndef OCCEST_H
#define OCCEST_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OccestStatus {
  OCCEST_STATUS_OK = 0,
  OCCEST_STATUS_NULL_ARGUMENT = 1,
  OCCEST_STATUS_INVALID_UTF8 = 2,
  OCCEST_STATUS_PARSE = 3,
  OCCEST_STATUS_INVALID_ARGUMENT = 4,
  OCCEST_STATUS_SOLVER = 5,
  // A certificate candidate was found but failed verification.
  OCCEST_STATUS_UNVERIFIED = 6,
  OCCEST_STATUS_PANIC = 7,
} OccestStatus;

typedef struct OccestInner OccestInner;

typedef struct OccestModel OccestModel;

typedef struct OccestSet OccestSet;

// Relaxation and solver settings.
typedef struct OccestOptions {
  bool localize_arcs;
  double epsilon;
  double solver_tol;
  uint32_t max_iter;
  // Threads for the violation programs of `occest_inner`.
  uint32_t workers;
} OccestOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

struct OccestOptions occest_options_default(void);

// Message of the last failure on this thread; empty after a success.
const char *occest_last_error(void);

// Parses a model document (JSON).
//
// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum OccestStatus occest_model_parse(const char *json, struct OccestModel **out);

// One of the bundled models: `enzyme`, `static` or `disjoint`.
//
// # Safety
// `name` must be a NUL-terminated string and `out` a valid pointer.
enum OccestStatus occest_model_builtin(const char *name, struct OccestModel **out);

// # Safety
// `model` must come from this library or be null.
void occest_model_free(struct OccestModel *model);

// Number of states including parameters; 0 for a null handle.
//
// # Safety
// `model` must be a live handle or null.
size_t occest_model_dimension(const struct OccestModel *model);

// Name of variable `i`, owned by the model; null when out of range.
//
// # Safety
// `model` must be a live handle or null.
const char *occest_model_variable_name(const struct OccestModel *model, size_t i);

// Maps `x` (original units) to the normalized unit box.
//
// # Safety
// `x` and `out` must hold `n` doubles.
enum OccestStatus occest_model_to_scaled(const struct OccestModel *model,
                                         const double *x,
                                         size_t n,
                                         double *out);

// Simulates from `x` and checks every constraint; `*consistent` is 1 or 0.
//
// # Safety
// `x` must hold `n` doubles and `consistent` be a valid pointer.
enum OccestStatus occest_is_consistent(const struct OccestModel *model,
                                       const double *x,
                                       size_t n,
                                       double step,
                                       int *consistent);

// Outer approximation at relaxation order `order`. `opts` may be null.
//
// # Safety
// `model` must be a live handle and `out` a valid pointer.
enum OccestStatus occest_outer(const struct OccestModel *model,
                               uint32_t order,
                               const struct OccestOptions *opts,
                               struct OccestSet **out);

// # Safety
// `set` must come from this library or be null.
void occest_set_free(struct OccestSet *set);

// Points with `v0 >= threshold` belong to the set; NaN for a null handle.
//
// # Safety
// `set` must be a live handle or null.
double occest_set_threshold(const struct OccestSet *set);

// `v0` at `x`.
//
// # Safety
// `x` must hold `n` doubles and `value` be a valid pointer.
enum OccestStatus occest_set_value(const struct OccestSet *set,
                                   const double *x,
                                   size_t n,
                                   double *value);

// # Safety
// `x` must hold `n` doubles and `inside` be a valid pointer.
enum OccestStatus occest_set_contains(const struct OccestSet *set,
                                      const double *x,
                                      size_t n,
                                      int *inside);

// Serializes the set; release the string with `occest_string_free`.
//
// # Safety
// `set` must be a live handle and `json` a valid pointer.
enum OccestStatus occest_set_to_json(const struct OccestSet *set, char **json);

// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum OccestStatus occest_set_from_json(const char *json, struct OccestSet **out);

// # Safety
// `s` must come from this library or be null.
void occest_string_free(char *s);

// Inner approximation from all violation programs at order `order`.
// A failed program leaves the inner set empty rather than failing the call.
//
// # Safety
// `model` must be a live handle and `out` a valid pointer.
enum OccestStatus occest_inner(const struct OccestModel *model,
                               uint32_t order,
                               const struct OccestOptions *opts,
                               struct OccestInner **out);

// # Safety
// `inner` must come from this library or be null.
void occest_inner_free(struct OccestInner *inner);

// Number of violation programs behind the set; 0 for a null handle.
//
// # Safety
// `inner` must be a live handle or null.
size_t occest_inner_program_count(const struct OccestInner *inner);

// Whether some violation program failed, leaving the set empty.
//
// # Safety
// `inner` must be a live handle or null.
bool occest_inner_is_conservatively_empty(const struct OccestInner *inner);

// # Safety
// `x` must hold `n` doubles and `inside` be a valid pointer.
enum OccestStatus occest_inner_contains(const struct OccestInner *inner,
                                        const double *x,
                                        size_t n,
                                        int *inside);

// Searches for a proof that no initial condition is consistent. On success
// `*found` is 1 and `*json` (if not null) receives the certificate, or `*found`
// is 0 when the order is too low or the model is consistent.
// `OCCEST_STATUS_UNVERIFIED` reports a candidate that failed verification.
//
// # Safety
// `model` must be a live handle, `found` a valid pointer, `json` valid or null.
enum OccestStatus occest_certify(const struct OccestModel *model,
                                 uint32_t order,
                                 const struct OccestOptions *opts,
                                 int *found,
                                 char **json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OCCEST_H */
