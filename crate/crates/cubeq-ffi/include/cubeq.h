#ifndef CUBEQ_H
#define CUBEQ_H

/* Generated with cbindgen:0.29.4 */

/* Generated by cbindgen from cubeq-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible entry point.
typedef enum CubeqStatus {
  CUBEQ_STATUS_OK = 0,
  // Null pointer, wrong length, unknown method, or other bad argument.
  CUBEQ_STATUS_INVALID_ARGUMENT = -1,
  // The form file text was not a valid form.
  CUBEQ_STATUS_PARSE = -2,
  // The request exceeds the enumeration or memory budget.
  CUBEQ_STATUS_BUDGET = -3,
  // Exact integer arithmetic left the representable range.
  CUBEQ_STATUS_OVERFLOW = -4,
  // A built-in cross-check failed.
  CUBEQ_STATUS_VERIFICATION = -5,
  // The library panicked; state is still consistent.
  CUBEQ_STATUS_INTERNAL = -6,
} CubeqStatus;

// Evaluation route selector for `cubeq_q_eval`.
typedef enum CubeqMethod {
  CUBEQ_METHOD_AUTO = 0,
  CUBEQ_METHOD_NAIVE = 1,
  CUBEQ_METHOD_GAUSS = 2,
  CUBEQ_METHOD_CRT = 3,
} CubeqMethod;

// Opaque form handle: the augmented polynomial `C(x_hat) - x_{n+1}^2`.
typedef struct CubeqForm CubeqForm;

// A computed `Q(m,k)` value with its absolute error bound; `method` is the
// route that produced it (0 naive, 1 gauss, 2 char, 3 crt, 4 stationary).
typedef struct CubeqQValue {
  double re;
  double im;
  double err;
  int32_t method;
} CubeqQValue;

// Both routes of the truncated local density at one prime.
typedef struct CubeqLocalFactor {
  double route_expsum;
  double route_count;
  double sigma_p;
  // 1 when the count route is stable from the previous level
  int32_t stabilized;
} CubeqLocalFactor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copy the last error message for this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length in bytes.
//
// # Safety
// `buf` must point to `len` writable bytes, or be null (query mode).
uintptr_t cubeq_last_error(char *buf, uintptr_t len);

// Parse a form from its JSON file text
// (`{"n": <int>, "terms": [{"e": [..], "c": <int>}, ..]}`).
//
// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum CubeqStatus cubeq_form_parse_json(const char *json, struct CubeqForm **out);

// Free a handle returned by `cubeq_form_parse_json`. Null is a no-op.
//
// # Safety
// `form` must be a pointer from `cubeq_form_parse_json`, not yet freed.
void cubeq_form_free(struct CubeqForm *form);

// Total number of variables of the counted polynomial, `n + 1`.
//
// # Safety
// `form` must be a live handle.
uint32_t cubeq_form_arity(const struct CubeqForm *form);

// Exact evaluation of `f(x) = C(x_hat) - x_{n+1}^2` at an integer point of
// length `n + 1`.
//
// # Safety
// `x` must point at `len` values; `out` must be valid.
enum CubeqStatus cubeq_form_evaluate(const struct CubeqForm *form,
                                     const int64_t *x,
                                     uintptr_t len,
                                     int64_t *out);

// Evaluate `Q(m,k)`; `m` has `n + 1` signed coordinates.
//
// # Safety
// `m` must point at `len` values; `out` must be valid.
enum CubeqStatus cubeq_q_eval(const struct CubeqForm *form,
                              const int64_t *m,
                              uintptr_t len,
                              uint64_t k,
                              enum CubeqMethod method,
                              struct CubeqQValue *out);

// Exact count of solutions of `f = 0 mod q`.
//
// # Safety
// `out` must be valid.
enum CubeqStatus cubeq_point_count(const struct CubeqForm *form, uint64_t q, uint64_t *out);

// Truncated local density at `p`, both routes; fails with a verification
// status if they disagree.
//
// # Safety
// `out` must be valid.
enum CubeqStatus cubeq_local_factor(const struct CubeqForm *form,
                                    uint64_t p,
                                    uint32_t level,
                                    struct CubeqLocalFactor *out);

// Look for a nonsingular solution of `f = 0 mod p`. On success `*found` is
// 0 or 1; when 1 and `witness` is non-null, the solution's `n + 1`
// coordinates are written there.
//
// # Safety
// `witness`, when non-null, must point at `cubeq_form_arity` slots.
enum CubeqStatus cubeq_hensel_witness(const struct CubeqForm *form,
                                      uint64_t p,
                                      uint64_t *witness,
                                      int32_t *found);

// Jacobi symbol `(a|k)` for odd `k`.
//
// # Safety
// `out` must be valid.
enum CubeqStatus cubeq_jacobi(int64_t a, uint64_t k, int32_t *out);

// Ramanujan sum `c_{p^alpha}(d)` by its closed form.
//
// # Safety
// `out` must be valid.
enum CubeqStatus cubeq_ramanujan(uint64_t p, uint32_t alpha, int64_t d, int64_t *out);

// The smooth weight `gamma(t) = exp(-2/(1-t^2))` inside `(-1,1)`, else 0.
double cubeq_weight_gamma(double t);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CUBEQ_H */
