#ifndef ELEVGRAPH_H
#define ELEVGRAPH_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum EgStatus {
  EG_STATUS_OK = 0,
  EG_STATUS_NULL_POINTER = 1,
  EG_STATUS_INVALID_ARGUMENT = 2,
  EG_STATUS_MISSING_NODE = 3,
  EG_STATUS_ILL_CONDITIONED = 4,
  EG_STATUS_CONFIG = 5,
  EG_STATUS_IO = 6,
  /**
   * Solver stopped at the iteration cap.
   */
  EG_STATUS_NOT_CONVERGED = 7,
  EG_STATUS_PANIC = 8,
} EgStatus;

typedef enum EgVariant {
  EG_VARIANT_BASELINE = 0,
  EG_VARIANT_SERIAL = 1,
  EG_VARIANT_PARALLEL = 2,
} EgVariant;

/**
 * Factor graph plus its current estimate.
 */
typedef struct EgGraph EgGraph;

/**
 * Cells of a comparison run, ordered by scenario, then seed, then variant.
 */
typedef struct EgReport EgReport;

typedef struct EgSolverSettings {
  uint32_t max_iterations;
  double initial_lambda;
  double lambda_up;
  double lambda_down;
  double relative_cost_tolerance;
  double gradient_tolerance;
} EgSolverSettings;

typedef struct EgPose {
  double tx;
  double ty;
  double tz;
  double qx;
  double qy;
  double qz;
  double qw;
} EgPose;

typedef struct EgSolveStats {
  uint32_t iterations;
  double initial_cost;
  double final_cost;
  bool converged;
  double wall_time_s;
} EgSolveStats;

/**
 * One (scenario, variant, seed) result of a comparison. Metrics are NaN when
 * `diverged` is set.
 */
typedef struct EgCell {
  uint32_t scenario_index;
  enum EgVariant variant;
  uint64_t seed;
  double delta_z;
  double delta_xy;
  double rmse_z;
  double rmse_xyz;
  uint32_t iterations;
  bool diverged;
} EgCell;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *eg_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated,
 * always NUL-terminated when `len > 0`). Returns the full message length
 * excluding the terminator, so a caller can size a second call.
 */
size_t eg_last_error_message(char *buf, size_t len);

struct EgSolverSettings eg_solver_settings_default(void);

/**
 * Creates an empty graph in `*out`.
 */
enum EgStatus eg_graph_new(struct EgGraph **out);

/**
 * Releases a graph. Null is ignored.
 */
void eg_graph_free(struct EgGraph *graph);

/**
 * Sets the initial estimate of node `id`, replacing any previous one.
 */
enum EgStatus eg_graph_set_value(struct EgGraph *graph, uint64_t id, const struct EgPose *pose);

enum EgStatus eg_graph_get_value(const struct EgGraph *graph, uint64_t id, struct EgPose *out);

/**
 * Full-pose prior with six sigmas (translation first).
 */
enum EgStatus eg_graph_add_prior(struct EgGraph *graph,
                                 uint64_t id,
                                 const struct EgPose *measured,
                                 const double *sigmas);

/**
 * Relative-pose factor from `a` to `b`.
 */
enum EgStatus eg_graph_add_between(struct EgGraph *graph,
                                   uint64_t a,
                                   uint64_t b,
                                   const struct EgPose *measured,
                                   const double *sigmas);

/**
 * Absolute height prior on node `id`.
 */
enum EgStatus eg_graph_add_elevation(struct EgGraph *graph, uint64_t id, double z, double sigma);

/**
 * Identity coupling between `x` and `y`. `sigmas` may be null for the
 * defaults (tight z, loose elsewhere).
 */
enum EgStatus eg_graph_add_coupling(struct EgGraph *graph,
                                    uint64_t x,
                                    uint64_t y,
                                    const double *sigmas);

enum EgStatus eg_graph_factor_count(const struct EgGraph *graph, size_t *out);

/**
 * Total whitened cost of the current estimate.
 */
enum EgStatus eg_graph_cost(const struct EgGraph *graph, double *out);

/**
 * Optimizes in place. `settings` may be null for the defaults; `stats` may be
 * null. Returns `NotConverged` (with the estimate still updated) when the
 * iteration cap is reached.
 */
enum EgStatus eg_graph_optimize(struct EgGraph *graph,
                                const struct EgSolverSettings *settings,
                                struct EgSolveStats *stats);

/**
 * Simulates and compares every configured variant from a TOML run
 * configuration (same schema as the CLI's `--config`; an empty string means
 * all defaults). Nothing is written to disk.
 */
enum EgStatus eg_compare_run(const char *config_toml, struct EgReport **out);

void eg_report_free(struct EgReport *report);

enum EgStatus eg_report_cell_count(const struct EgReport *report, size_t *out);

enum EgStatus eg_report_cell(const struct EgReport *report, size_t index, struct EgCell *out);

/**
 * Copies the name of scenario `index` into `buf` like
 * [`eg_last_error_message`] and stores its full length in `*len_out`.
 */
enum EgStatus eg_report_scenario_name(const struct EgReport *report,
                                      size_t index,
                                      char *buf,
                                      size_t len,
                                      size_t *len_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ELEVGRAPH_H */
