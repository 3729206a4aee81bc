#ifndef SYNMIRROR_H
#define SYNMIRROR_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum {
  SYN_STATUS_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  SYN_STATUS_NULL_ARGUMENT = 1,
  /**
   * An argument was out of range or not valid UTF-8/JSON.
   */
  SYN_STATUS_INVALID_ARGUMENT = 2,
  SYN_STATUS_IO = 3,
  /**
   * A stored or supplied profile could not be parsed.
   */
  SYN_STATUS_PARSE = 4,
  SYN_STATUS_NOT_FOUND = 5,
  /**
   * The profile exceeds the document backend's limits.
   */
  SYN_STATUS_TOO_LARGE = 6,
  /**
   * The command to profile could not be started.
   */
  SYN_STATUS_LAUNCH = 7,
  /**
   * Hardware counters are unavailable and fallback was not allowed.
   */
  SYN_STATUS_CAPABILITY = 8,
  SYN_STATUS_EMULATION = 9,
  /**
   * A Rust panic was caught at the boundary.
   */
  SYN_STATUS_PANIC = 10,
} SynStatus;

/**
 * A profile: header, time series, totals and derived metrics.
 */
typedef struct SynProfile SynProfile;

/**
 * The outcome of replaying a profile.
 */
typedef struct SynReport SynReport;

/**
 * An open profile store.
 */
typedef struct SynStore SynStore;

/**
 * Whole-run totals of a profile.
 */
typedef struct {
  double runtime;
  uint64_t cycles_used;
  uint64_t instructions;
  uint64_t cycles_stalled_frontend;
  uint64_t cycles_stalled_backend;
  uint64_t bytes_read;
  uint64_t bytes_written;
  uint64_t mem_allocated;
  uint64_t mem_freed;
  uint64_t rss_max;
  uint64_t peak;
  double efficiency;
  double utilization;
} SynTotals;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or an empty string. The
 * pointer stays valid until the next call into this library on the same
 * thread.
 */
const char *synm_last_error(void);

/**
 * Library version as a static string.
 */
const char *synm_version(void);

/**
 * Frees a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` is NULL or a string returned by this library that was not yet freed.
 */
void synm_string_free(char *s);

/**
 * Profiles `argv[0..argc]` until it exits, sampling every `period` seconds
 * (0 selects the default). With `fallback` set, cycles are estimated from
 * CPU time when hardware counters are unavailable. `tags` holds `ntags`
 * `key=value` strings.
 *
 * # Safety
 * `argv` points to `argc` valid strings, `tags` to `ntags` valid strings
 * (or is NULL when `ntags` is 0), and `out` is valid for a write.
 */
SynStatus synm_profile_run(const char *const *argv,
                           size_t argc,
                           double period,
                           bool fallback,
                           const char *const *tags,
                           size_t ntags,
                           SynProfile **out);

/**
 * Parses a profile from its stored text form.
 *
 * # Safety
 * `text` is a valid string and `out` is valid for a write.
 */
SynStatus synm_profile_from_json(const char *text, SynProfile **out);

/**
 * Reads a profile file.
 *
 * # Safety
 * `path` is a valid string and `out` is valid for a write.
 */
SynStatus synm_profile_load_file(const char *path, SynProfile **out);

/**
 * Serializes a profile to its stored text form; free with
 * [`synm_string_free`].
 *
 * # Safety
 * `profile` is a live handle and `out` is valid for a write.
 */
SynStatus synm_profile_to_json(const SynProfile *profile, char **out);

/**
 * Copies the profile's totals and derived metrics into `out`.
 *
 * # Safety
 * `profile` is a live handle and `out` is valid for a write.
 */
SynStatus synm_profile_totals(const SynProfile *profile, SynTotals *out);

/**
 * Number of samples across all series.
 *
 * # Safety
 * `profile` is NULL or a live handle.
 */
size_t synm_profile_sample_count(const SynProfile *profile);

/**
 * Releases a profile. NULL is ignored.
 *
 * # Safety
 * `profile` is NULL or a live handle that is not used afterwards.
 */
void synm_profile_free(SynProfile *profile);

/**
 * `cycles_used / (cycles_used + stalled_frontend + stalled_backend)`.
 * All-zero input yields 0 with `*degenerate` set.
 *
 * # Safety
 * `out` is valid for a write; `degenerate` is NULL or valid for a write.
 */
SynStatus synm_efficiency(uint64_t cycles_used,
                          uint64_t stalled_frontend,
                          uint64_t stalled_backend,
                          double *out,
                          bool *degenerate);

/**
 * `cycles_used / (max_freq * elapsed * cores)`, not clamped to 1.
 *
 * # Safety
 * `out` is valid for a write.
 */
SynStatus synm_utilization(uint64_t cycles_used,
                           double elapsed,
                           uint64_t max_freq,
                           uint32_t cores,
                           double *out);

/**
 * Opens a store: a directory path, a `mem://name` URL, or NULL for the
 * location configured in the environment.
 *
 * # Safety
 * `location` is NULL or a valid string, and `out` is valid for a write.
 */
SynStatus synm_store_open(const char *location, SynStore **out);

/**
 * Saves a profile; `*id` receives its new id (free with
 * [`synm_string_free`]).
 *
 * # Safety
 * `store` and `profile` are live handles and `id` is valid for a write.
 */
SynStatus synm_store_save(const SynStore *store, const SynProfile *profile, char **id);

/**
 * Loads a profile by id.
 *
 * # Safety
 * `store` is a live handle, `id` a valid string and `out` valid for a write.
 */
SynStatus synm_store_load(const SynStore *store, const char *id, SynProfile **out);

/**
 * Looks up profiles of `command` with exactly the given tags. `*count`
 * receives the number of matches; `*newest` (if not NULL) receives the most
 * recent one, or NULL when nothing matches. No match is not an error.
 *
 * # Safety
 * `store` is a live handle, `command` a valid string, `tags` points to
 * `ntags` valid strings (or is NULL when `ntags` is 0), `count` is valid
 * for a write and `newest` is NULL or valid for a write.
 */
SynStatus synm_store_find(const SynStore *store,
                          const char *command,
                          const char *const *tags,
                          size_t ntags,
                          size_t *count,
                          SynProfile **newest);

/**
 * Closes a store. NULL is ignored.
 *
 * # Safety
 * `store` is NULL or a live handle that is not used afterwards.
 */
void synm_store_free(SynStore *store);

/**
 * Replays a profile. `config_json` is NULL for the defaults or a JSON
 * object whose fields override them (for example
 * `{"io_block_size_write": 4096}`).
 *
 * # Safety
 * `profile` is a live handle, `config_json` is NULL or a valid string, and
 * `out` is valid for a write.
 */
SynStatus synm_emulate(const SynProfile *profile, const char *config_json, SynReport **out);

/**
 * Wall-clock seconds of the replay, from the first sample's start to the
 * last sample's end.
 *
 * # Safety
 * `report` is a live handle and `out` is valid for a write.
 */
SynStatus synm_report_tx(const SynReport *report, double *out);

/**
 * Serializes a report to JSON; free with [`synm_string_free`].
 *
 * # Safety
 * `report` is a live handle and `out` is valid for a write.
 */
SynStatus synm_report_to_json(const SynReport *report, char **out);

/**
 * Releases a report. NULL is ignored.
 *
 * # Safety
 * `report` is NULL or a live handle that is not used afterwards.
 */
void synm_report_free(SynReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SYNMIRROR_H */
