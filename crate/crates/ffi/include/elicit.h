#ifndef ELICIT_H
#define ELICIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum ElicitStatus {
  ELICIT_STATUS_OK = 0,
  ELICIT_STATUS_NULL_POINTER = 1,
  ELICIT_STATUS_INVALID_ARGUMENT = 2,
  ELICIT_STATUS_PARSE = 3,
  ELICIT_STATUS_OUT_OF_RANGE = 4,
  /**
   * The property failed a structural condition while separating.
   */
  ELICIT_STATUS_SEPARATION = 5,
  ELICIT_STATUS_BUFFER_TOO_SMALL = 6,
  ELICIT_STATUS_PANIC = 7,
} ElicitStatus;

/**
 * Separating functionals on a grid of levels.
 */
typedef struct ElicitFamily ElicitFamily;

/**
 * Property `Gamma` on a finite simplex.
 */
typedef struct ElicitProperty ElicitProperty;

/**
 * Scoring table synthesized from a family.
 */
typedef struct ElicitScoringRule ElicitScoringRule;

/**
 * Evaluator for custom properties: `weights` has `n` entries summing to 1.
 */
typedef double (*ElicitPropertyFn)(const double *weights, size_t n, void *user_data);

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until
 * the next `elicit_*` call on the same thread.
 */
const char *elicit_last_error(void);

/**
 * Parses a property from its JSON description.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum ElicitStatus elicit_property_from_json(const char *json, struct ElicitProperty **out);

/**
 * Wraps a C evaluator as a property on `n` outcomes.
 *
 * # Safety
 * `id` must be a NUL-terminated string; `out` must be writable. `f` must
 * be safe to call from several threads at once with `user_data`, which
 * must outlive the returned handle and every family built from it.
 */
enum ElicitStatus elicit_property_custom(const char *id,
                                         size_t n,
                                         ElicitPropertyFn f,
                                         void *user_data,
                                         struct ElicitProperty **out);

/**
 * # Safety
 * `prop` must be null or a handle from a property constructor, not yet freed.
 */
void elicit_property_free(struct ElicitProperty *prop);

/**
 * Number of outcomes, or 0 for a null handle.
 *
 * # Safety
 * `prop` must be null or a live property handle.
 */
size_t elicit_property_dim(const struct ElicitProperty *prop);

/**
 * # Safety
 * `prop` must be a live handle, `w` must point to `n` doubles and `out`
 * must be writable.
 */
enum ElicitStatus elicit_property_eval(const struct ElicitProperty *prop,
                                       const double *w,
                                       size_t n,
                                       double *out);

/**
 * Image interval `[lo, hi]` of the property over the simplex.
 *
 * # Safety
 * `prop` must be a live handle; `lo` and `hi` must be writable.
 */
enum ElicitStatus elicit_property_image(const struct ElicitProperty *prop, double *lo, double *hi);

/**
 * Separating functional at level `r` under the `l_p` norm (`p` may be
 * `INFINITY`). Writes `n` entries to `z` and the level-set residual to
 * `residual` when non-null.
 *
 * # Safety
 * `prop` must be a live handle; `z` must have room for `n` doubles;
 * `residual` must be null or writable.
 */
enum ElicitStatus elicit_separate(const struct ElicitProperty *prop,
                                  double r,
                                  double p,
                                  uint64_t seed,
                                  double *z,
                                  size_t n,
                                  double *residual);

/**
 * Runs the randomized segment-monotonicity check. `passed` receives 1 if
 * no violation was found and 0 otherwise.
 *
 * # Safety
 * `prop` must be a live handle; `passed` must be writable.
 */
enum ElicitStatus elicit_check_quasi_monotone(const struct ElicitProperty *prop,
                                              size_t trials,
                                              uint64_t seed,
                                              int32_t *passed);

/**
 * Separating family on `grid_size` evenly spaced interior levels.
 *
 * # Safety
 * `prop` must be a live handle; `out` must be writable.
 */
enum ElicitStatus elicit_family_build(const struct ElicitProperty *prop,
                                      size_t grid_size,
                                      double p,
                                      uint64_t seed,
                                      struct ElicitFamily **out);

/**
 * # Safety
 * `fam` must be null or a handle from [`elicit_family_build`], not yet freed.
 */
void elicit_family_free(struct ElicitFamily *fam);

/**
 * Number of levels, or 0 for a null handle.
 *
 * # Safety
 * `fam` must be null or a live family handle.
 */
size_t elicit_family_len(const struct ElicitFamily *fam);

/**
 * Number of outcomes, or 0 for a null handle.
 *
 * # Safety
 * `fam` must be null or a live family handle.
 */
size_t elicit_family_dim(const struct ElicitFamily *fam);

/**
 * Level `k` and its functional (`n` entries written to `z`).
 *
 * # Safety
 * `fam` must be a live handle; `r` must be writable; `z` must have room
 * for `n` doubles.
 */
enum ElicitStatus elicit_family_level(const struct ElicitFamily *fam,
                                      size_t k,
                                      double *r,
                                      double *z,
                                      size_t n);

/**
 * Integrates the family with unit weight, anchored at the grid node
 * nearest to `r0` (pass NaN for the middle of the grid).
 *
 * # Safety
 * `fam` must be a live handle; `out` must be writable.
 */
enum ElicitStatus elicit_scoring_synthesize(const struct ElicitFamily *fam,
                                            double r0,
                                            struct ElicitScoringRule **out);

/**
 * # Safety
 * `rule` must be null or a handle from [`elicit_scoring_synthesize`], not
 * yet freed.
 */
void elicit_scoring_free(struct ElicitScoringRule *rule);

/**
 * Expected score `E_P S(r, Y)` at the grid node nearest to `r`.
 *
 * # Safety
 * `rule` must be a live handle; `w` must point to `n` doubles; `out` must
 * be writable.
 */
enum ElicitStatus elicit_scoring_expected(const struct ElicitScoringRule *rule,
                                          const double *w,
                                          size_t n,
                                          double r,
                                          double *out);

/**
 * Grid level minimizing the expected score under `w`.
 *
 * # Safety
 * `rule` must be a live handle; `w` must point to `n` doubles; `out` must
 * be writable.
 */
enum ElicitStatus elicit_scoring_argmin(const struct ElicitScoringRule *rule,
                                        const double *w,
                                        size_t n,
                                        double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ELICIT_H */
