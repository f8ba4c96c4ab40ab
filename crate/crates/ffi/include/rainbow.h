#ifndef RAINBOW_H
#define RAINBOW_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdint.h>

typedef enum RainbowStatus {
  RAINBOW_STATUS_OK = 0,
  RAINBOW_STATUS_NULL_POINTER = 1,
  RAINBOW_STATUS_INVALID_ARGUMENT = 2,
  RAINBOW_STATUS_CONFIG = 3,
  RAINBOW_STATUS_IO = 4,
  RAINBOW_STATUS_TRACE_FORMAT = 5,
  RAINBOW_STATUS_SIMULATION = 6,
  RAINBOW_STATUS_PANIC = 7,
} RainbowStatus;

typedef enum RainbowPolicy {
  RAINBOW_POLICY_RAINBOW = 0,
  RAINBOW_POLICY_FLAT_STATIC = 1,
  RAINBOW_POLICY_HSCC4K_MIG = 2,
  RAINBOW_POLICY_HSCC2M_MIG = 3,
  RAINBOW_POLICY_DRAM_ONLY = 4,
} RainbowPolicy;

/**
 * Opaque simulator configuration.
 */
typedef struct RainbowConfig RainbowConfig;

/**
 * Opaque simulator instance.
 */
typedef struct RainbowSim RainbowSim;

/**
 * Headline numbers of a run so far.
 */
typedef struct RainbowSummary {
  uint64_t references;
  uint64_t total_cycles;
  uint64_t page_walks;
  double mpkr;
  double r_hit;
  uint64_t llc_misses;
  uint64_t dram_accesses;
  uint64_t nvm_accesses;
  uint64_t migrations;
  uint64_t evictions;
  uint64_t migration_traffic_bytes;
  double total_energy_pj;
} RainbowSummary;

/**
 * Latencies and per-page move costs in cycles.
 */
typedef struct RainbowCostModel {
  uint64_t t_nr;
  uint64_t t_nw;
  uint64_t t_dr;
  uint64_t t_dw;
  uint64_t t_mig;
  uint64_t t_writeback;
} RainbowCostModel;

/**
 * Controller storage in bytes.
 */
typedef struct RainbowStorage {
  uint64_t bitmap_cache_bytes;
  uint64_t superpage_counter_bytes;
  uint64_t psn_list_bytes;
  uint64_t fine_grain_counter_bytes;
  uint64_t total_bytes;
  uint64_t full_bitmap_bytes;
} RainbowStorage;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread, or null. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *rainbow_last_error(void);

/**
 * Creates a configuration holding the defaults.
 *
 * # Safety
 * `out` must be null or point to writable storage for one pointer.
 */
enum RainbowStatus rainbow_config_new(struct RainbowConfig **out_config);

/**
 * Loads a configuration file of `section.key = value` lines.
 *
 * # Safety
 * `path` must be null or a NUL-terminated string; `out_config` as for
 * [`rainbow_config_new`].
 */
enum RainbowStatus rainbow_config_load(const char *path, struct RainbowConfig **out_config);

/**
 * Sets one key, e.g. `monitor.interval_cycles` to `1e7`. The configuration
 * is unchanged if the result would be invalid.
 *
 * # Safety
 * `config` must be null or a live handle; `key` and `value` null or
 * NUL-terminated strings.
 */
enum RainbowStatus rainbow_config_set(struct RainbowConfig *config,
                                      const char *key,
                                      const char *value);

/**
 * # Safety
 * `config` must be null or a handle not yet freed.
 */
void rainbow_config_free(struct RainbowConfig *config);

/**
 * Parses a policy name such as `rainbow` or `hscc-2m-mig`.
 *
 * # Safety
 * `name` must be null or NUL-terminated; `out_policy` null or writable.
 */
enum RainbowStatus rainbow_policy_from_name(const char *name, enum RainbowPolicy *out_policy);

/**
 * Builds a simulator for `policy`. The configuration is copied.
 *
 * # Safety
 * `config` must be null or a live handle; `out_sim` null or writable.
 */
enum RainbowStatus rainbow_sim_new(const struct RainbowConfig *config,
                                   enum RainbowPolicy policy,
                                   struct RainbowSim **out_sim);

/**
 * Simulates one reference. `op` is 0 for a read and 1 for a write. The
 * cycles charged are stored in `out_cycles` when it is not null.
 *
 * # Safety
 * `sim` must be null or a live handle; `out_cycles` null or writable.
 */
enum RainbowStatus rainbow_sim_step(struct RainbowSim *sim,
                                    uint8_t op,
                                    uint8_t tid,
                                    uint64_t vaddr,
                                    uint64_t *out_cycles);

/**
 * Feeds every record of a binary trace file to the simulator. Records
 * before a format error are kept.
 *
 * # Safety
 * `sim` must be null or a live handle; `path` null or NUL-terminated.
 */
enum RainbowStatus rainbow_sim_run_trace(struct RainbowSim *sim, const char *path);

/**
 * # Safety
 * `sim` must be null or a live handle; `out_summary` null or writable.
 */
enum RainbowStatus rainbow_sim_summary(const struct RainbowSim *sim,
                                       struct RainbowSummary *out_summary);

/**
 * Full report as a JSON string, released with [`rainbow_string_free`].
 *
 * # Safety
 * `sim` must be null or a live handle; `out_json` null or writable.
 */
enum RainbowStatus rainbow_sim_report_json(const struct RainbowSim *sim, char **out_json);

/**
 * # Safety
 * `sim` must be null or a handle not yet freed.
 */
void rainbow_sim_free(struct RainbowSim *sim);

/**
 * # Safety
 * `s` must be null or a string returned by this library and not yet freed.
 */
void rainbow_string_free(char *s);

/**
 * Cost model implied by a configuration.
 *
 * # Safety
 * `config` must be null or a live handle; `out_model` null or writable.
 */
enum RainbowStatus rainbow_cost_model(const struct RainbowConfig *config,
                                      struct RainbowCostModel *out_model);

/**
 * Cycles gained by migrating a page read `reads` and written `writes` times.
 *
 * # Safety
 * `model` must be null or readable; `out_cycles` null or writable.
 */
enum RainbowStatus rainbow_migration_benefit(const struct RainbowCostModel *model,
                                             uint64_t reads,
                                             uint64_t writes,
                                             int64_t *out_cycles);

/**
 * Net gain of replacing a DRAM page (`victim_*` counts) with an NVM page.
 *
 * # Safety
 * `model` must be null or readable; `out_cycles` null or writable.
 */
enum RainbowStatus rainbow_swap_benefit(const struct RainbowCostModel *model,
                                        uint64_t reads,
                                        uint64_t writes,
                                        uint64_t victim_reads,
                                        uint64_t victim_writes,
                                        int64_t *out_cycles);

/**
 * Controller storage for `nvm_bytes` of NVM, `top_n` monitored superpages
 * and a bitmap cache of `bitmap_cache_entries` entries.
 *
 * # Safety
 * `out_storage` must be null or writable.
 */
enum RainbowStatus rainbow_storage_accounting(uint64_t nvm_bytes,
                                              uint64_t top_n,
                                              uint64_t bitmap_cache_entries,
                                              struct RainbowStorage *out_storage);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RAINBOW_H */
