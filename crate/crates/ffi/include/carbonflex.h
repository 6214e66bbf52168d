#ifndef CARBONFLEX_H
#define CARBONFLEX_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CfStatus {
  CF_STATUS_OK = 0,
  CF_STATUS_NULL_POINTER = -1,
  CF_STATUS_INVALID_UTF8 = -2,
  CF_STATUS_IO = -3,
  CF_STATUS_PARSE = -4,
  CF_STATUS_RANGE = -5,
  CF_STATUS_INFEASIBLE = -6,
  CF_STATUS_INVALID = -7,
  CF_STATUS_PANIC = -99,
} CfStatus;

/**
 * Experiment settings: cluster, learning, provisioning and simulation.
 */
typedef struct CfConfig CfConfig;

typedef struct CfKnowledgeBase CfKnowledgeBase;

typedef struct CfOracle CfOracle;

typedef struct CfOutcome CfOutcome;

typedef struct CfTrace CfTrace;

/**
 * Jobs loaded against a config's queues and profiles.
 */
typedef struct CfWorkload CfWorkload;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *cf_version(void);

/**
 * Size in bytes, including the terminating NUL, of the last error message
 * on this thread; 0 when the last call succeeded.
 */
size_t cf_last_error_length(void);

/**
 * Copy the last error message into `buf`. Returns the number of bytes
 * written without the NUL, 0 when there is no error, or -1 when `buf` is
 * null or too small.
 *
 * # Safety
 * `buf` must point to at least `len` writable bytes.
 */
int32_t cf_last_error_message(char *buf, size_t len);

/**
 * Release a string returned by this library.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void cf_string_free(char *s);

/**
 * Default settings for a cluster of `max_capacity` servers with the
 * built-in scaling profiles.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum CfStatus cf_config_new(uint32_t max_capacity, struct CfConfig **out);

/**
 * Read an experiment TOML file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CfStatus cf_config_load(const char *path, struct CfConfig **out);

/**
 * # Safety
 * `config` must come from this library and not have been freed already.
 */
void cf_config_free(struct CfConfig *config);

/**
 * Read a carbon-intensity CSV.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CfStatus cf_trace_load(const char *path, struct CfTrace **out);

/**
 * Hourly trace from `len` values in gCO2/kWh.
 *
 * # Safety
 * `values` must point to `len` doubles and `out` must be a valid pointer.
 */
enum CfStatus cf_trace_from_values(const double *values, size_t len, struct CfTrace **out);

/**
 * Number of samples, or 0 for a null trace.
 *
 * # Safety
 * `trace` must be null or come from this library.
 */
size_t cf_trace_len(const struct CfTrace *trace);

/**
 * # Safety
 * `trace` must come from this library and not have been freed already.
 */
void cf_trace_free(struct CfTrace *trace);

/**
 * Read a job CSV, routing jobs to the config's queues and resolving
 * profile ids against its profile set.
 *
 * # Safety
 * `config` must come from this library, `path` must be a NUL-terminated
 * string and `out` a valid pointer.
 */
enum CfStatus cf_workload_load(const struct CfConfig *config,
                               const char *path,
                               struct CfWorkload **out);

/**
 * Number of jobs, or 0 for a null workload.
 *
 * # Safety
 * `workload` must be null or come from this library.
 */
size_t cf_workload_len(const struct CfWorkload *workload);

/**
 * # Safety
 * `workload` must come from this library and not have been freed already.
 */
void cf_workload_free(struct CfWorkload *workload);

/**
 * Offline minimum-carbon schedule of the workload over the whole trace,
 * extending deadlines for at most `max_rounds` rounds (0 means one pass).
 * An infeasible result is still returned; check [`cf_oracle_feasible`].
 *
 * # Safety
 * Handles must come from this library and `out` must be a valid pointer.
 */
enum CfStatus cf_oracle_run(const struct CfConfig *config,
                            const struct CfWorkload *workload,
                            const struct CfTrace *trace,
                            size_t max_rounds,
                            struct CfOracle **out);

/**
 * # Safety
 * `oracle` must come from this library and `out` must be a valid pointer.
 */
enum CfStatus cf_oracle_carbon_g(const struct CfOracle *oracle, double *out);

/**
 * # Safety
 * `oracle` must come from this library and `out` must be a valid pointer.
 */
enum CfStatus cf_oracle_feasible(const struct CfOracle *oracle, bool *out);

/**
 * Number of slots covered by the per-slot decisions, or 0 for null.
 *
 * # Safety
 * `oracle` must be null or come from this library.
 */
size_t cf_oracle_slots(const struct CfOracle *oracle);

/**
 * Occupied servers and marginal-throughput threshold in slot `t`.
 *
 * # Safety
 * `oracle` must come from this library; the output pointers must be valid.
 */
enum CfStatus cf_oracle_slot(const struct CfOracle *oracle,
                             size_t t,
                             uint32_t *capacity,
                             double *threshold);

/**
 * Write the per-slot decisions and the per-job allocations as CSV.
 *
 * # Safety
 * `oracle` must come from this library; paths must be NUL-terminated.
 */
enum CfStatus cf_oracle_write_csvs(const struct CfOracle *oracle,
                                   const char *slots_path,
                                   const char *allocations_path);

/**
 * # Safety
 * `oracle` must come from this library and not have been freed already.
 */
void cf_oracle_free(struct CfOracle *oracle);

/**
 * Learning phase: replay the oracle over the historical workload with the
 * config's learning settings.
 *
 * # Safety
 * Handles must come from this library and `out` must be a valid pointer.
 */
enum CfStatus cf_kb_learn(const struct CfConfig *config,
                          const struct CfWorkload *workload,
                          const struct CfTrace *trace,
                          struct CfKnowledgeBase **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CfStatus cf_kb_load(const char *path, struct CfKnowledgeBase **out);

/**
 * # Safety
 * `kb` must come from this library and `path` must be NUL-terminated.
 */
enum CfStatus cf_kb_save(const struct CfKnowledgeBase *kb, const char *path);

/**
 * Number of stored cases, or 0 for null.
 *
 * # Safety
 * `kb` must be null or come from this library.
 */
size_t cf_kb_len(const struct CfKnowledgeBase *kb);

/**
 * # Safety
 * `kb` must come from this library and not have been freed already.
 */
void cf_kb_free(struct CfKnowledgeBase *kb);

/**
 * Run policies on the evaluation workload. `policies` is a comma-separated
 * list of names, or null for every policy the inputs allow (carbonflex
 * only when `kb` is non-null). Forecast noise and seed come from the
 * config's simulation settings.
 *
 * # Safety
 * `kb` and `policies` may be null; other handles must come from this
 * library and `out` must be a valid pointer.
 */
enum CfStatus cf_compare(const struct CfConfig *config,
                         const struct CfWorkload *workload,
                         const struct CfTrace *trace,
                         const struct CfKnowledgeBase *kb,
                         const char *policies,
                         struct CfOutcome **out);

/**
 * The outcome document as JSON; release it with [`cf_string_free`].
 *
 * # Safety
 * `outcome` must come from this library and `out` must be a valid pointer.
 */
enum CfStatus cf_outcome_json(const struct CfOutcome *outcome, char **out);

/**
 * Total carbon (g) and savings against carbon-agnostic (%) of one policy.
 *
 * # Safety
 * `outcome` must come from this library, `policy` must be NUL-terminated
 * and the output pointers must be valid.
 */
enum CfStatus cf_outcome_policy(const struct CfOutcome *outcome,
                                const char *policy,
                                double *carbon_g,
                                double *savings_pct);

/**
 * Write `outcome.json` and one decision log per policy into `dir`.
 *
 * # Safety
 * `outcome` must come from this library and `dir` must be NUL-terminated.
 */
enum CfStatus cf_outcome_write(const struct CfOutcome *outcome, const char *dir);

/**
 * # Safety
 * `outcome` must come from this library and not have been freed already.
 */
void cf_outcome_free(struct CfOutcome *outcome);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CARBONFLEX_H */
