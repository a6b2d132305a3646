#ifndef THROWPLAN_H
#define THROWPLAN_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TpStatus {
  TP_STATUS_OK = 0,
  TP_STATUS_NULL_POINTER = 1,
  TP_STATUS_INVALID_ARGUMENT = 2,
  TP_STATUS_IO = 3,
  TP_STATUS_NO_SOLUTION = 4,
  TP_STATUS_OUT_OF_RANGE = 5,
  TP_STATUS_INTERNAL = 6,
} TpStatus;

/**
 * Configurations returned by one planning call.
 */
typedef struct TpPlanResult TpPlanResult;

/**
 * Loaded planner. Safe to share between threads for planning.
 */
typedef struct TpPlanner TpPlanner;

typedef struct TpThrowConfig {
  double q[7];
  double qd[7];
  /**
   * Arm base origin, world frame.
   */
  double base[3];
  double base_yaw;
  double release[3];
  double velocity[3];
  double phi;
  double gamma;
  double f_brt;
  /**
   * Smallest joint or tube margin; positive when strictly feasible.
   */
  double min_margin;
} TpThrowConfig;

typedef struct TpSimOutcome {
  bool success;
  double landing_point[3];
  double flight_time;
  double miss_distance;
} TpSimOutcome;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread, or null. Valid until the next call.
 */
const char *tp_last_error(void);

/**
 * Library version as a static string.
 */
const char *tp_version(void);

/**
 * Release point of the default arm at joint angles `q` (7 values) into `out_xyz`.
 *
 * # Safety
 * `q` must point to 7 doubles and `out_xyz` to 3 writable doubles.
 */
enum TpStatus tp_arm_forward(const double *q, double *out_xyz);

/**
 * Loads a planner from the artifacts written by the command-line tool.
 * `arm_path` may be null for the bundled arm.
 *
 * # Safety
 * Path arguments must be null or NUL-terminated strings; `out` must be writable.
 */
enum TpStatus tp_planner_load(const char *hedgehog_path,
                              const char *brt_path,
                              const char *model_path,
                              const char *arm_path,
                              struct TpPlanner **out);

/**
 * # Safety
 * `planner` must be null or a handle from [`tp_planner_load`] not yet freed.
 */
void tp_planner_free(struct TpPlanner *planner);

/**
 * Plans configurations throwing into a box at `target` from a base at `base`
 * (3 doubles each). `limit` caps the number of results; 0 means no cap.
 *
 * # Safety
 * `planner` must be a live handle, `target` and `base` must point to 3 doubles
 * and `out` must be writable.
 */
enum TpStatus tp_planner_plan(const struct TpPlanner *planner,
                              const double *target,
                              const double *base,
                              size_t limit,
                              struct TpPlanResult **out);

/**
 * # Safety
 * `result` must be null or a handle from [`tp_planner_plan`] not yet freed.
 */
void tp_result_free(struct TpPlanResult *result);

/**
 * Number of configurations in `result`; 0 for null.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
size_t tp_result_len(const struct TpPlanResult *result);

/**
 * Copies configuration `index` into `out`.
 *
 * # Safety
 * `result` must be a live handle and `out` writable.
 */
enum TpStatus tp_result_get(const struct TpPlanResult *result,
                            size_t index,
                            struct TpThrowConfig *out);

/**
 * Moves the arm from rest at `start_q` (7 doubles) to configuration `index`,
 * releases the ball and simulates its flight into the target box.
 *
 * # Safety
 * Handles must be live, `start_q` must point to 7 doubles and `out` be writable.
 */
enum TpStatus tp_result_simulate(const struct TpPlanner *planner,
                                 const struct TpPlanResult *result,
                                 size_t index,
                                 const double *start_q,
                                 struct TpSimOutcome *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* THROWPLAN_H */
