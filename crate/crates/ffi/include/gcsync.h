/* C interface for the gcsync guaranteed-cost synchronization toolkit. */

#ifndef GCSYNC_H
#define GCSYNC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call. `GCS_STATUS_OK` is zero; anything else
// leaves a message readable through `gcs_last_error`.
typedef enum GcsStatus {
  GCS_STATUS_OK = 0,
  // Null pointer, wrong dimension, or malformed input.
  GCS_STATUS_INVALID_ARGUMENT = 1,
  // The scenario text does not parse.
  GCS_STATUS_PARSE_ERROR = 2,
  // The design or analysis criteria admit no certificate.
  GCS_STATUS_INFEASIBLE = 3,
  // The cost budget cannot cover synchronizing the network.
  GCS_STATUS_BUDGET_TOO_SMALL = 4,
  // The simulated network left the representable range.
  GCS_STATUS_DIVERGED = 5,
  // Unexpected internal failure.
  GCS_STATUS_INTERNAL_ERROR = 6,
} GcsStatus;

// A protocol gain pair.
typedef struct GcsGains GcsGains;

// A parsed scenario: model, topology, weights, budget, run settings.
typedef struct GcsScenario GcsScenario;

// A finished closed-loop run.
typedef struct GcsTrajectory GcsTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the most recent failure on this thread. The pointer
// stays valid until the next failing call on the same thread. Never null.
const char *gcs_last_error(void);

// Parses a scenario from TOML text into a new handle.
//
// # Safety
// `toml_text` must be a valid NUL-terminated string; `out` must be valid.
enum GcsStatus gcs_scenario_parse(const char *toml_text, struct GcsScenario **out);

// Releases a scenario handle. Null is ignored.
//
// # Safety
// `s` must come from `gcs_scenario_parse` and not be freed twice.
void gcs_scenario_free(struct GcsScenario *s);

// Reports agent count, per-agent state dimension, input dimension, and the
// configured budget. Any output pointer may be null to skip that field.
//
// # Safety
// `s` must be a live scenario handle.
enum GcsStatus gcs_scenario_info(const struct GcsScenario *s,
                                 uint32_t *agents,
                                 uint32_t *state_dim,
                                 uint32_t *input_dim,
                                 double *budget);

// Replaces the scenario's cost budget.
//
// # Safety
// `s` must be a live scenario handle.
enum GcsStatus gcs_scenario_set_budget(struct GcsScenario *s, double budget);

// Replaces the integration step and horizon used by `gcs_simulate`.
//
// # Safety
// `s` must be a live scenario handle.
enum GcsStatus gcs_scenario_set_sim(struct GcsScenario *s, double dt, double horizon);

// Designs certified protocol gains for the scenario under its budget.
// On success `out` receives a new gains handle.
//
// # Safety
// `s` must be a live scenario handle; `out` must be valid.
enum GcsStatus gcs_design(const struct GcsScenario *s, struct GcsGains **out);

// Builds a gains handle from row-major matrices: `ku` drives the inputs
// from the protocol state, `kphi` injects the measured output error.
//
// # Safety
// `ku` must point to `ku_rows * ku_cols` doubles and `kphi` to
// `kphi_rows * kphi_cols` doubles; `out` must be valid.
enum GcsStatus gcs_gains_from_data(uint32_t ku_rows,
                                   uint32_t ku_cols,
                                   const double *ku,
                                   uint32_t kphi_rows,
                                   uint32_t kphi_cols,
                                   const double *kphi,
                                   struct GcsGains **out);

// Reports the dimensions of both gain matrices. Output pointers may be
// null to skip fields.
//
// # Safety
// `g` must be a live gains handle.
enum GcsStatus gcs_gains_dims(const struct GcsGains *g,
                              uint32_t *ku_rows,
                              uint32_t *ku_cols,
                              uint32_t *kphi_rows,
                              uint32_t *kphi_cols);

// Copies both gain matrices out in row-major order. Each buffer length
// must exactly match rows x cols of that matrix.
//
// # Safety
// `g` must be live; `ku_out` and `kphi_out` must point to writable buffers
// of the stated lengths.
enum GcsStatus gcs_gains_copy(const struct GcsGains *g,
                              double *ku_out,
                              uintptr_t ku_len,
                              double *kphi_out,
                              uintptr_t kphi_len);

// Releases a gains handle. Null is ignored.
//
// # Safety
// `g` must come from this library and not be freed twice.
void gcs_gains_free(struct GcsGains *g);

// Checks the gains against the scenario's criteria. On `GCS_STATUS_OK`
// the guaranteed cost bound is stored in `cost_bound` (if non-null).
//
// # Safety
// `s` and `g` must be live handles.
enum GcsStatus gcs_analyze(const struct GcsScenario *s,
                           const struct GcsGains *g,
                           double *cost_bound);

// Integrates the closed loop with the scenario's step and horizon.
// `GCS_STATUS_DIVERGED` means the states left the representable range.
//
// # Safety
// `s` and `g` must be live handles; `out` must be valid.
enum GcsStatus gcs_simulate(const struct GcsScenario *s,
                            const struct GcsGains *g,
                            struct GcsTrajectory **out);

// Number of stored samples, including the initial condition. Zero for a
// null handle.
//
// # Safety
// `t` must be null or a live trajectory handle.
uintptr_t gcs_trajectory_samples(const struct GcsTrajectory *t);

// Reports agent count and per-agent state dimension of a trajectory.
//
// # Safety
// `t` must be a live trajectory handle.
enum GcsStatus gcs_trajectory_dims(const struct GcsTrajectory *t,
                                   uint32_t *agents,
                                   uint32_t *state_dim);

// Reads the time stamp and running cost of sample `index`. Either output
// pointer may be null.
//
// # Safety
// `t` must be a live trajectory handle.
enum GcsStatus gcs_trajectory_sample(const struct GcsTrajectory *t,
                                     uintptr_t index,
                                     double *time,
                                     double *cost);

// Copies the stacked agent states of sample `index`; `len` must equal
// agents x state_dim.
//
// # Safety
// `t` must be live; `out` must point to `len` writable doubles.
enum GcsStatus gcs_trajectory_states(const struct GcsTrajectory *t,
                                     uintptr_t index,
                                     double *out,
                                     uintptr_t len);

// Accumulated quadratic cost at the final sample.
//
// # Safety
// `t` must be a live trajectory handle.
enum GcsStatus gcs_trajectory_final_cost(const struct GcsTrajectory *t, double *out);

// Releases a trajectory handle. Null is ignored.
//
// # Safety
// `t` must come from `gcs_simulate` and not be freed twice.
void gcs_trajectory_free(struct GcsTrajectory *t);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GCSYNC_H */
