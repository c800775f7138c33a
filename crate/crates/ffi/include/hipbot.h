#ifndef HIPBOT_H
#define HIPBOT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HipbotStatus {
  HIPBOT_STATUS_OK = 0,
  HIPBOT_STATUS_NULL_POINTER = 1,
  HIPBOT_STATUS_INVALID_UTF8 = 2,
  HIPBOT_STATUS_INVALID_ARGUMENT = 3,
  HIPBOT_STATUS_CONFIG = 4,
  HIPBOT_STATUS_SOLVER = 5,
  HIPBOT_STATUS_SIMULATION = 6,
  HIPBOT_STATUS_IO = 7,
  HIPBOT_STATUS_PANIC = 8,
} HipbotStatus;

/**
 * A running episode, advanced one control step at a time.
 */
typedef struct HipbotEpisode HipbotEpisode;

/**
 * A validated scenario configuration.
 */
typedef struct HipbotScenario HipbotScenario;

typedef struct HipbotEpisodeResult {
  uint64_t seed;
  bool success;
  bool safe;
  bool reached;
  size_t ts;
  double d2g;
  double plan_ms_mean;
} HipbotEpisodeResult;

typedef struct HipbotMetrics {
  size_t seeds;
  double suc;
  double safe;
  double goal_any;
  double d2g_mean;
  double d2g_std;
  double ts_mean;
  double ts_std;
  double plan_ms_mean;
} HipbotMetrics;

typedef struct HipbotAgentState {
  size_t step;
  double qx;
  double qy;
  double vx;
  double vy;
  /**
   * Signed distance from the agent center to the nearest obstacle.
   */
  double min_sdf;
  double distance_to_goal;
  bool collided;
  bool reached;
  /**
   * Goal reached or step cap hit.
   */
  bool done;
} HipbotAgentState;

typedef struct HipbotSolveInfo {
  size_t iterations;
  bool converged;
  /**
   * Max-norm deviation of the plan marginals from the targets.
   */
  double marginal_error;
} HipbotSolveInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *hipbot_version(void);

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next library call on the same thread.
 */
const char *hipbot_last_error(void);

/**
 * Parses and validates a scenario from JSON text.
 *
 * # Safety
 * `json` must be NUL-terminated; `out` must be writable.
 */
enum HipbotStatus hipbot_scenario_from_json(const char *json, struct HipbotScenario **out_scenario);

/**
 * Loads a scenario file.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum HipbotStatus hipbot_scenario_load(const char *path, struct HipbotScenario **out_scenario);

/**
 * Applies one `path=value` override, e.g. `planner.horizon=5`. The
 * scenario is left unchanged if the result does not validate.
 *
 * # Safety
 * `scenario` must come from this library; `assignment` must be NUL-terminated.
 */
enum HipbotStatus hipbot_scenario_set(struct HipbotScenario *scenario, const char *assignment);

/**
 * Writes the scenario as JSON into `buffer` (NUL-terminated) and its full
 * length, excluding the NUL, into `out_len`. Pass a NULL buffer to query
 * the length; a short buffer is an error and is left untouched.
 *
 * # Safety
 * `buffer` must hold `capacity` bytes when non-NULL.
 */
enum HipbotStatus hipbot_scenario_to_json(const struct HipbotScenario *scenario,
                                          char *buffer,
                                          size_t capacity,
                                          size_t *out_len);

/**
 * # Safety
 * `scenario` must come from this library and not be used afterwards.
 */
void hipbot_scenario_free(struct HipbotScenario *scenario);

/**
 * Runs one full episode.
 *
 * # Safety
 * Pointers must be valid.
 */
enum HipbotStatus hipbot_run_episode(const struct HipbotScenario *scenario,
                                     uint64_t seed,
                                     struct HipbotEpisodeResult *out_result);

/**
 * Runs every seed of the scenario and aggregates the metrics.
 *
 * # Safety
 * Pointers must be valid.
 */
enum HipbotStatus hipbot_run_batch(const struct HipbotScenario *scenario,
                                   struct HipbotMetrics *out_metrics);

/**
 * Starts an episode; the scenario may be freed afterwards.
 *
 * # Safety
 * Pointers must be valid.
 */
enum HipbotStatus hipbot_episode_new(const struct HipbotScenario *scenario,
                                     uint64_t seed,
                                     struct HipbotEpisode **out_episode);

/**
 * Current agent state without stepping.
 *
 * # Safety
 * Pointers must be valid.
 */
enum HipbotStatus hipbot_episode_state(const struct HipbotEpisode *episode,
                                       struct HipbotAgentState *out_state);

/**
 * Plans, acts and advances the world by one step, then reports the new
 * state. Stepping a finished episode leaves it unchanged.
 *
 * # Safety
 * Pointers must be valid.
 */
enum HipbotStatus hipbot_episode_step(struct HipbotEpisode *episode,
                                      struct HipbotAgentState *out_state);

/**
 * Scores the episode as it stands and frees it, whatever the status.
 *
 * # Safety
 * `episode` must come from this library and not be used afterwards.
 */
enum HipbotStatus hipbot_episode_finish(struct HipbotEpisode *episode,
                                        struct HipbotEpisodeResult *out_result);

/**
 * # Safety
 * `episode` must come from this library and not be used afterwards.
 */
void hipbot_episode_free(struct HipbotEpisode *episode);

/**
 * Balanced entropic OT. `cost` and `out_plan` are row-major `n × m`;
 * `row` has `n` entries and `col` has `m`, with equal totals. `out_info`
 * may be NULL.
 *
 * # Safety
 * Arrays must hold the stated number of doubles.
 */
enum HipbotStatus hipbot_solve_balanced(const double *cost,
                                        size_t n,
                                        size_t m,
                                        const double *row,
                                        const double *col,
                                        double lambda,
                                        size_t max_iterations,
                                        double tolerance,
                                        double *out_plan,
                                        struct HipbotSolveInfo *out_info);

/**
 * Unbalanced entropic OT against positive priors `row` and `col`, with
 * marginal KL weight `lambda_kl`. Layout as [`hipbot_solve_balanced`].
 *
 * # Safety
 * Arrays must hold the stated number of doubles.
 */
enum HipbotStatus hipbot_solve_unbalanced(const double *cost,
                                          size_t n,
                                          size_t m,
                                          const double *row,
                                          const double *col,
                                          double lambda,
                                          double lambda_kl,
                                          size_t max_iterations,
                                          double tolerance,
                                          double *out_plan,
                                          struct HipbotSolveInfo *out_info);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HIPBOT_H */
