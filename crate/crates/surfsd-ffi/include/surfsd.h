#ifndef SURFSD_H
#define SURFSD_H

/* Generated by cbindgen from the surfsd-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes mirroring the CLI exit codes.
 */
typedef enum sd_status {
  SD_STATUS_OK = 0,
  /**
   * Configuration could not be read, parsed or validated.
   */
  SD_STATUS_CONFIG_ERROR = 2,
  /**
   * Geometry, assembly or solver failure.
   */
  SD_STATUS_NUMERICAL_ERROR = 3,
  /**
   * Null pointer, invalid UTF-8 or an undersized buffer.
   */
  SD_STATUS_INVALID_ARGUMENT = 4,
  /**
   * A panic was caught at the boundary (library bug; see message).
   */
  SD_STATUS_PANIC = 5,
} sd_status;

/**
 * Opaque parsed run configuration.
 */
typedef struct sd_config sd_config;

/**
 * Opaque result of a single solve.
 */
typedef struct sd_solve_result sd_solve_result;

/**
 * Scalar metrics of a solve, returned by value.
 */
typedef struct sd_solve_metrics {
  /**
   * Background-mesh parameter (maximum tetrahedron diameter).
   */
  double h;
  /**
   * Number of active degrees of freedom.
   */
  size_t n_dofs;
  /**
   * Relative residual reached by the linear solver.
   */
  double residual;
  /**
   * Krylov iterations (1 for the dense path).
   */
  size_t iterations;
  /**
   * Streamline-diffusion and normal-gradient weights actually used.
   */
  double tau1;
  double tau2;
  double beta_inf;
  /**
   * Nonzero when the zero-mean constraint was active.
   */
  bool mean_constraint;
  /**
   * Nonzero when the error norms below are meaningful (an exact
   * solution was configured).
   */
  bool has_errors;
  double l2_err;
  double h1t_err;
  double sd_err;
  double ns_err;
  double triple_err;
} sd_solve_metrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the last error message of this thread into `buf` (NUL terminated,
 * truncated to `cap`). Returns the full message length in bytes,
 * excluding the terminator; call with `buf = NULL` to query the length.
 *
 * # Safety
 * `buf` must be null or point to at least `cap` writable bytes.
 */
size_t sd_last_error_message(char *buf, size_t cap);

/**
 * Parse a TOML run configuration from a file. Returns null on failure
 * (see `sd_last_error_message`).
 *
 * # Safety
 * `path` must be a valid NUL-terminated string.
 */
struct sd_config *sd_config_load(const char *path);

/**
 * Parse a TOML run configuration from a string. Returns null on failure.
 *
 * # Safety
 * `text` must be a valid NUL-terminated string.
 */
struct sd_config *sd_config_parse(const char *text);

/**
 * Free a configuration handle (null is a no-op).
 *
 * # Safety
 * `cfg` must be a pointer returned by this library, freed at most once.
 */
void sd_config_free(struct sd_config *cfg);

/**
 * Solve the configured problem, writing the solution surface and the
 * manifest into `out_dir`. Returns a result handle, or null on failure.
 *
 * # Safety
 * `cfg` must be a live handle from this library and `out_dir` a valid
 * NUL-terminated string.
 */
struct sd_solve_result *sd_solve_run(const struct sd_config *cfg, const char *out_dir);

/**
 * Free a solve-result handle (null is a no-op).
 *
 * # Safety
 * `result` must be a pointer returned by this library, freed at most
 * once.
 */
void sd_solve_result_free(struct sd_solve_result *result);

/**
 * Scalar metrics of a completed solve.
 *
 * # Safety
 * `result` must be a live handle and `out` a valid pointer.
 */
enum sd_status sd_solve_get_metrics(const struct sd_solve_result *result,
                                    struct sd_solve_metrics *out);

/**
 * Number of solution values (active degrees of freedom).
 *
 * # Safety
 * `result` must be a live handle.
 */
size_t sd_solve_solution_len(const struct sd_solve_result *result);

/**
 * Copy the nodal solution values into a caller buffer of length `len`
 * (must be at least `sd_solve_solution_len`).
 *
 * # Safety
 * `result` must be a live handle and `buf` must point to `len` doubles.
 */
enum sd_status sd_solve_solution_copy(const struct sd_solve_result *result,
                                      double *buf,
                                      size_t len);

/**
 * Run the refinement study; writes convergence.csv and the manifest.
 *
 * # Safety
 * `cfg` must be a live handle from this library and `out_dir` a valid
 * NUL-terminated string.
 */
enum sd_status sd_run_convergence(const struct sd_config *cfg, const char *out_dir);

/**
 * Run the condition-number study; writes condition.csv and the manifest.
 *
 * # Safety
 * `cfg` must be a live handle from this library and `out_dir` a valid
 * NUL-terminated string.
 */
enum sd_status sd_run_condition(const struct sd_config *cfg, const char *out_dir);

/**
 * Run the layer study; writes layer.csv, one VTK per parameter set and
 * the manifest.
 *
 * # Safety
 * `cfg` must be a live handle from this library and `out_dir` a valid
 * NUL-terminated string.
 */
enum sd_status sd_run_layer(const struct sd_config *cfg, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SURFSD_H */
