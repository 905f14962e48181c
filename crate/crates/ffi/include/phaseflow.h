#ifndef PHASEFLOW_H
#define PHASEFLOW_H

#include <stddef.h>

// Result codes shared by every entry point.
typedef enum PfStatus {
  PF_STATUS_OK = 0,
  PF_STATUS_NULL_POINTER = 1,
  PF_STATUS_INVALID_ARGUMENT = 2,
  PF_STATUS_SHAPE = 3,
  PF_STATUS_DOMAIN = 4,
  PF_STATUS_INSUFFICIENT_DATA = 5,
  PF_STATUS_CONFIG = 6,
  PF_STATUS_PARSE = 7,
  PF_STATUS_IO = 8,
  PF_STATUS_DIVERGED = 9,
  PF_STATUS_TRAINING_DIVERGED = 10,
  PF_STATUS_BUFFER_TOO_SMALL = 11,
  PF_STATUS_PANIC = 12,
} PfStatus;

// A trained network or a sparse polynomial model.
typedef struct PfModel PfModel;

// A sequence of snapshots with a fixed time step.
typedef struct PfTrajectory PfTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or an empty string.
// The pointer stays valid until the next call into this library on the
// same thread.
const char *pf_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *pf_version(void);

// Van der Pol first-order target at `x[2]`, written to `out[2]`.
//
// # Safety
// `x` and `out` must point to two doubles each.
enum PfStatus pf_vdp_target(const double *x, double mu, double *out);

// Non-polynomial, non-rational oscillator target at `x[2]`, written to `out[2]`.
//
// # Safety
// `x` and `out` must point to two doubles each.
enum PfStatus pf_yg_target(const double *x, double *out);

// Integrates a closed-form system described by JSON, e.g.
// `{"name":"vdp","mu":2.0}`, `{"name":"yg"}` or `{"name":"mean_field"}`,
// for `steps` forward-Euler steps. On divergence `*out` receives the
// finite prefix when it has at least two snapshots, otherwise null.
//
// # Safety
// `system_json` must be a NUL-terminated string, `x0` must hold `dim`
// doubles and `out` must be writable.
enum PfStatus pf_trajectory_generate(const char *system_json,
                                     const double *x0,
                                     size_t dim,
                                     double dt,
                                     size_t steps,
                                     struct PfTrajectory **out);

// Reads a trajectory CSV with its JSON sidecar.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum PfStatus pf_trajectory_load(const char *path, struct PfTrajectory **out);

// Writes a trajectory CSV and its JSON sidecar.
//
// # Safety
// `t` must be a live handle and `path` a NUL-terminated string.
enum PfStatus pf_trajectory_save(const struct PfTrajectory *t, const char *path);

// Number of snapshots, state dimension and time step.
//
// # Safety
// `t` must be a live handle; each output pointer may be null.
enum PfStatus pf_trajectory_shape(const struct PfTrajectory *t,
                                  size_t *len,
                                  size_t *dim,
                                  double *dt);

// Copies the row-major `len × dim` states into `buf`, which holds `cap`
// doubles.
//
// # Safety
// `t` must be a live handle and `buf` must hold `cap` doubles.
enum PfStatus pf_trajectory_copy_states(const struct PfTrajectory *t, double *buf, size_t cap);

// # Safety
// `t` must be null or a handle not freed before.
void pf_trajectory_free(struct PfTrajectory *t);

// Loads a network or SINDy model from JSON.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum PfStatus pf_model_load(const char *path, struct PfModel **out);

// # Safety
// `m` must be a live handle and `path` a NUL-terminated string.
enum PfStatus pf_model_save(const struct PfModel *m, const char *path);

// # Safety
// `m` must be a live handle and `dim` writable.
enum PfStatus pf_model_dim(const struct PfModel *m, size_t *dim);

// `out = f(x)`.
//
// # Safety
// `x` and `out` must each hold the model dimension in doubles.
enum PfStatus pf_model_predict(const struct PfModel *m, const double *x, double *out);

// Row-major `∂f/∂x` at `x`.
//
// # Safety
// `x` must hold `dim` doubles and `out` `dim*dim` doubles.
enum PfStatus pf_model_jacobian(const struct PfModel *m, const double *x, double *out);

// Rolls the model out for `steps` steps from `x0`. Divergence behaves as in
// [`pf_trajectory_generate`].
//
// # Safety
// `x0` must hold the model dimension in doubles and `out` be writable.
enum PfStatus pf_model_rollout(const struct PfModel *m,
                               const double *x0,
                               double dt,
                               size_t steps,
                               struct PfTrajectory **out);

// # Safety
// `m` must be null or a handle not freed before.
void pf_model_free(struct PfModel *m);

// Trains a network on the forward-difference pairs of `n` trajectories.
// `config_json` holds the training configuration, e.g.
// `{"layer_sizes":[2,8,8,2],"activation":{"kind":"swish"},"epochs":500}`.
//
// # Safety
// `trajs` must point to `n` live handles, `config_json` must be a
// NUL-terminated string and `out` writable.
enum PfStatus pf_model_train(const struct PfTrajectory *const *trajs,
                             size_t n,
                             const char *config_json,
                             struct PfModel **out);

// Fits a sparse polynomial model to the forward-difference pairs of `n`
// trajectories.
//
// # Safety
// `trajs` must point to `n` live handles and `out` be writable.
enum PfStatus pf_sindy_fit(const struct PfTrajectory *const *trajs,
                           size_t n,
                           size_t order,
                           double threshold,
                           struct PfModel **out);

// Leading `n_modes` orthonormal DCT-II coefficients of `u[n]`.
//
// # Safety
// `u` must hold `n` doubles and `out` `n_modes` doubles.
enum PfStatus pf_dct_reduce(const double *u, size_t n, size_t n_modes, double *out);

// Coefficient of determination averaged over components.
//
// # Safety
// `y` and `p` must each hold `rows*dim` doubles; `out` must be writable.
enum PfStatus pf_r2_score(const double *y, const double *p, size_t rows, size_t dim, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PHASEFLOW_H */
