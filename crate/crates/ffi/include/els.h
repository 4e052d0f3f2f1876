#ifndef ELS_H
#define ELS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ElsStatus {
  ELS_STATUS_OK = 0,
  ELS_STATUS_INFEASIBLE = 1,
  ELS_STATUS_NUMERICAL_FAILURE = 2,
  ELS_STATUS_INVALID_ARGUMENT = 3,
  ELS_STATUS_PARSE_ERROR = 4,
  ELS_STATUS_NULL_POINTER = 5,
  ELS_STATUS_NOT_AVAILABLE = 6,
  ELS_STATUS_PANIC = 7,
} ElsStatus;

typedef enum ElsRoute {
  ELS_ROUTE_PSD_MULTIPLIER = 0,
  ELS_ROUTE_SECOND_ORDER = 1,
  ELS_ROUTE_NONE = 2,
} ElsRoute;

typedef enum ElsConclusion {
  ELS_CONCLUSION_GLOBAL = 0,
  ELS_CONCLUSION_NOT_LOCAL_MINIMIZER = 1,
  ELS_CONCLUSION_INCONCLUSIVE = 2,
} ElsConclusion;

// Opaque problem instance.
typedef struct ElsProblemHandle ElsProblemHandle;

// Opaque solve result.
typedef struct ElsSolutionHandle ElsSolutionHandle;

typedef struct ElsOptions {
  double tol;
  double rank_tol;
  uint64_t seed;
  size_t restarts;
  bool with_oracle;
} ElsOptions;

typedef struct ElsVerdict {
  bool kkt_ok;
  bool lambda_psd;
  bool licq;
  size_t jacobian_rank;
  bool second_order_ok;
  bool global;
  enum ElsRoute route;
  enum ElsConclusion conclusion;
  double stationarity_residual;
} ElsVerdict;

typedef struct ElsConditions {
  bool beck;
  bool exact;
  bool no_local_nonglobal;
} ElsConditions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. Valid until the
// next call into the library on the same thread.
const char *els_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *els_version(void);

struct ElsOptions els_options_default(void);

// Creates a problem with objective `A0` (`p x n`, row-major) and no
// constraints.
//
// # Safety
// `a0` must point to `p * n` doubles; `out` must be writable.
enum ElsStatus els_problem_new(size_t n, size_t p, const double *a0, struct ElsProblemHandle **out);

// Parses a problem file.
//
// # Safety
// `text` must be a NUL-terminated UTF-8 string; `out` must be writable.
enum ElsStatus els_problem_from_json(const char *text, struct ElsProblemHandle **out);

// Appends `lower <= tr(A X) <= upper`; pass infinities for one-sided bounds.
//
// # Safety
// `problem` must be a live handle; `a` must point to `p * n` doubles.
enum ElsStatus els_problem_add_constraint(struct ElsProblemHandle *problem,
                                          const double *a,
                                          double lower,
                                          double upper);

// # Safety
// `problem` must be a live handle; the out pointers must be writable.
enum ElsStatus els_problem_dims(const struct ElsProblemHandle *problem,
                                size_t *n,
                                size_t *p,
                                size_t *k);

// # Safety
// `problem` must be null or a handle not yet freed.
void els_problem_free(struct ElsProblemHandle *problem);

// Relaxation, rank reduction, certificate and optional oracle. An
// infeasible relaxation still yields a solution handle together with
// `ElsStatus::Infeasible`.
//
// # Safety
// `problem` must be a live handle; `options` may be null for defaults;
// `out` must be writable.
enum ElsStatus els_solve(const struct ElsProblemHandle *problem,
                         const struct ElsOptions *options,
                         struct ElsSolutionHandle **out);

// Relaxation optimum, or NaN for a null handle.
//
// # Safety
// `solution` must be null or a live handle.
double els_solution_relaxation_value(const struct ElsSolutionHandle *solution);

// Whether a Stiefel point matching the relaxation value was recovered.
//
// # Safety
// `solution` must be null or a live handle.
bool els_solution_is_exact(const struct ElsSolutionHandle *solution);

// Oracle value when the oracle ran and found a point.
//
// # Safety
// `solution` must be a live handle; `value` must be writable.
enum ElsStatus els_solution_oracle_value(const struct ElsSolutionHandle *solution, double *value);

// Copies the recovered `n x p` point row-major into `out[0..len]`.
//
// # Safety
// `solution` must be a live handle; `out` must hold `len` doubles.
enum ElsStatus els_solution_recovered_x(const struct ElsSolutionHandle *solution,
                                        double *out,
                                        size_t len);

// Full report as JSON, owned by the handle.
//
// # Safety
// `solution` must be null or a live handle.
const char *els_solution_report_json(const struct ElsSolutionHandle *solution);

// # Safety
// `solution` must be null or a handle not yet freed.
void els_solution_free(struct ElsSolutionHandle *solution);

// Certificate for the `n x p` row-major point `x`, which must be feasible.
//
// # Safety
// `problem` must be a live handle; `x` must point to `n * p` doubles;
// `out` must be writable.
enum ElsStatus els_certify(const struct ElsProblemHandle *problem,
                           const double *x,
                           struct ElsVerdict *out);

// # Safety
// `out` must be writable.
enum ElsStatus els_check_conditions(size_t n, size_t p, size_t k, struct ElsConditions *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ELS_H */
