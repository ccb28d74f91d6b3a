#ifndef ADPLAN_H
#define ADPLAN_H

#include <stddef.h>

// Result of a call.
typedef enum AdplanStatus {
  ADPLAN_STATUS_OK = 0,
  // The model has no feasible point.
  ADPLAN_STATUS_INFEASIBLE = 1,
  // The objective is unbounded.
  ADPLAN_STATUS_UNBOUNDED = 2,
  ADPLAN_STATUS_INVALID_ARGUMENT = 3,
  ADPLAN_STATUS_NULL_POINTER = 4,
  // Malformed input file.
  ADPLAN_STATUS_PARSE = 5,
  ADPLAN_STATUS_IO = 6,
  ADPLAN_STATUS_ITERATION_LIMIT = 7,
  ADPLAN_STATUS_INTERNAL = 8,
  // A Rust panic was caught at the boundary.
  ADPLAN_STATUS_PANIC = 9,
} AdplanStatus;

// Constraint relation codes for [`adplan_lp_add_constraint`].
typedef enum AdplanRelation {
  ADPLAN_RELATION_LE = 0,
  ADPLAN_RELATION_GE = 1,
  ADPLAN_RELATION_EQ = 2,
} AdplanRelation;

// Optimization direction codes.
typedef enum AdplanSense {
  ADPLAN_SENSE_MAXIMIZE = 0,
  ADPLAN_SENSE_MINIMIZE = 1,
} AdplanSense;

// Linear program over non-negative variables.
typedef struct AdplanLp AdplanLp;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message into `buf` as a
// NUL-terminated string, truncated to `len` bytes. Returns the buffer size
// needed for the whole message; 1 means no error is recorded.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t adplan_last_error(char *buf, size_t len);

// Library version as a static NUL-terminated string.
const char *adplan_version(void);

// New problem with `num_vars` variables, a zero objective and no
// constraints. `sense_code` is an [`AdplanSense`] code. Returns null on an
// invalid sense.
struct AdplanLp *adplan_lp_new(size_t num_vars, int sense_code);

// # Safety
// `lp` must be null or a handle from [`adplan_lp_new`] not yet freed.
void adplan_lp_free(struct AdplanLp *lp);

// Number of variables, or 0 for a null handle.
//
// # Safety
// `lp` must be null or a live handle.
size_t adplan_lp_num_vars(const struct AdplanLp *lp);

// Number of constraints, or 0 for a null handle.
//
// # Safety
// `lp` must be null or a live handle.
size_t adplan_lp_num_constraints(const struct AdplanLp *lp);

// Sets the objective coefficients; `len` must equal the variable count.
//
// # Safety
// `lp` must be a live handle and `coeffs` must point to `len` values.
enum AdplanStatus adplan_lp_set_objective(struct AdplanLp *lp, const double *coeffs, size_t len);

// Appends the dense row `coeffs · x (relation) rhs`; `relation` is an
// [`AdplanRelation`] code.
//
// # Safety
// `lp` must be a live handle and `coeffs` must point to `len` values.
enum AdplanStatus adplan_lp_add_constraint(struct AdplanLp *lp,
                                           const double *coeffs,
                                           size_t len,
                                           int relation_code,
                                           double rhs);

// Solves the problem with the two-phase simplex. On [`AdplanStatus::Ok`]
// writes the optimal point to `values` (if not null; `len` must equal the
// variable count) and the objective to `objective` (if not null).
// Infeasible and unbounded problems return their status codes.
//
// # Safety
// `lp` must be a live handle; `values` must be null or point to `len`
// writable values; `objective` must be null or writable.
enum AdplanStatus adplan_lp_solve(const struct AdplanLp *lp,
                                  double *values,
                                  size_t len,
                                  double *objective);

// Solves a balanced transportation problem with the stepping-stone method.
// `values` is the row-major `m × n` matrix of unit costs (or profits for
// [`AdplanSense::Maximize`]); `flows`, when not null, receives the
// row-major optimal shipment.
//
// # Safety
// `supplies` and `demands` must point to `m` and `n` values, `values` and
// `flows` (if not null) to `m·n`, and `objective` must be null or writable.
enum AdplanStatus adplan_transport_solve(const double *supplies,
                                         size_t m,
                                         const double *demands,
                                         size_t n,
                                         const double *values,
                                         int sense_code,
                                         double *flows,
                                         double *objective);

// Runs one planning cycle from a `key = value` configuration file and
// writes the plan CSV. `plan_out`, when not null, overrides the configured
// output path; `objective`, when not null, receives the planned revenue.
//
// # Safety
// `config_path` and `plan_out` must be null or NUL-terminated strings and
// `objective` must be null or writable.
enum AdplanStatus adplan_plan_files(const char *config_path,
                                    const char *plan_out,
                                    double *objective);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADPLAN_H */
