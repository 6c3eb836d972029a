/* C interface to the ropocop trace-analysis engine. */

#ifndef ROPOCOP_H
#define ROPOCOP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Run the indirect-branch-run detector.
 */
#define ROPOCOP_DETECTOR_ANTICRA 1

/**
 * Run the image-map target check.
 */
#define ROPOCOP_DETECTOR_DEPPLUS 2

/**
 * Scan-mode selector for the image-map detector.
 */
typedef enum RopocopDepMode {
  /**
   * Use whatever the config says.
   */
  ROPOCOP_DEP_MODE_USE_CONFIG = 0,
  ROPOCOP_DEP_MODE_FULL_SCAN = 1,
  ROPOCOP_DEP_MODE_WATERMARK = 2,
} RopocopDepMode;

/**
 * Call outcome. Anything but `Ok` leaves a message in
 * `ropocop_last_error()`.
 */
typedef enum RopocopStatus {
  ROPOCOP_STATUS_OK = 0,
  ROPOCOP_STATUS_NULL_ARGUMENT = 1,
  ROPOCOP_STATUS_INVALID_UTF8 = 2,
  ROPOCOP_STATUS_IO = 3,
  ROPOCOP_STATUS_CONFIG = 4,
  ROPOCOP_STATUS_TRACE = 5,
  ROPOCOP_STATUS_INVALID_ARGUMENT = 6,
  ROPOCOP_STATUS_PANIC = 7,
} RopocopStatus;

/**
 * Opaque incremental analyzer. Feed trace lines in order, starting with the
 * header line; not thread-safe, one analyzer per thread.
 */
typedef struct RopocopAnalyzer RopocopAnalyzer;

/**
 * Opaque detector configuration.
 */
typedef struct RopocopConfig RopocopConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static string; do not free.
 */
const char *ropocop_version(void);

/**
 * Message for the last failing call on this thread. Valid until the next
 * failing call; do not free.
 */
const char *ropocop_last_error(void);

/**
 * Default detector configuration. Free with `ropocop_config_free`.
 */
struct RopocopConfig *ropocop_config_default(void);

/**
 * Loads a TOML config file.
 *
 * # Safety
 * `path` must be a valid nul-terminated string and `out` a valid pointer.
 */
enum RopocopStatus ropocop_config_load(const char *path, struct RopocopConfig **out);

/**
 * # Safety
 * `cfg` must come from this library and not have been freed.
 */
void ropocop_config_free(struct RopocopConfig *cfg);

/**
 * Creates an analyzer. `detectors` is a mask of `ROPOCOP_DETECTOR_*` bits.
 *
 * # Safety
 * `cfg` must be a live config handle and `out` a valid pointer.
 */
enum RopocopStatus ropocop_analyzer_new(const struct RopocopConfig *cfg,
                                        uint32_t detectors,
                                        enum RopocopDepMode mode,
                                        struct RopocopAnalyzer **out);

/**
 * Feeds one line of a trace, header first. Alarms accumulate on the handle.
 *
 * # Safety
 * `analyzer` must be a live analyzer handle; `line` a valid string.
 */
enum RopocopStatus ropocop_analyzer_feed_line(struct RopocopAnalyzer *analyzer, const char *line);

/**
 * # Safety
 * `analyzer` must be a live analyzer handle.
 */
uint64_t ropocop_analyzer_alarm_count(const struct RopocopAnalyzer *analyzer);

/**
 * Event index of the first alarm, or -1 when clean.
 *
 * # Safety
 * `analyzer` must be a live analyzer handle.
 */
int64_t ropocop_analyzer_first_alarm_index(const struct RopocopAnalyzer *analyzer);

/**
 * # Safety
 * `analyzer` must be a live analyzer handle.
 */
uint64_t ropocop_analyzer_events_seen(const struct RopocopAnalyzer *analyzer);

/**
 * Renders the JSON report for everything fed so far.
 *
 * # Safety
 * `analyzer` must be a live handle, `trace_name` a valid string, `out` a
 * valid pointer. Free the result with `ropocop_string_free`.
 */
enum RopocopStatus ropocop_analyzer_report_json(const struct RopocopAnalyzer *analyzer,
                                                const char *trace_name,
                                                char **out);

/**
 * # Safety
 * `analyzer` must come from `ropocop_analyzer_new` and not have been freed.
 */
void ropocop_analyzer_free(struct RopocopAnalyzer *analyzer);

/**
 * One-shot analysis of a trace file. On success `out_alarms` holds the
 * alarm count and, when `out_report_json` is non-null, a JSON report the
 * caller frees with `ropocop_string_free`.
 *
 * # Safety
 * `cfg` must be a live config handle; `path` a valid string; `out_alarms`
 * valid; `out_report_json` null or valid.
 */
enum RopocopStatus ropocop_analyze_file(const struct RopocopConfig *cfg,
                                        const char *path,
                                        uint32_t detectors,
                                        enum RopocopDepMode mode,
                                        uint64_t *out_alarms,
                                        char **out_report_json);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must have been returned by this library and not freed already.
 */
void ropocop_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ROPOCOP_H */
