/* C interface of the shwy driving workbench (libshwy).
 *
 * Every function returns a shwy_status. On failure the message of the most
 * recent error on the calling thread is available from shwy_last_error().
 * Objects are opaque handles released with the matching *_destroy call;
 * destroy functions accept NULL.
 *
 * Functions that produce text write into a caller buffer: they store the
 * required size (including the terminating NUL) in *needed and return
 * SHWY_ERR_BUFFER_TOO_SMALL when capacity is insufficient. Passing a NULL
 * buffer with capacity 0 is the usual way to query the size.
 */
#ifndef SHWY_H
#define SHWY_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define SHWY_API __declspec(dllexport)
#else
#define SHWY_API __attribute__((visibility("default")))
#endif

typedef enum shwy_status {
  SHWY_OK = 0,
  SHWY_ERR_INVALID_ARGUMENT = 1,
  SHWY_ERR_CONTRACT = 2,
  SHWY_ERR_IO = 3,
  SHWY_ERR_FORMAT = 4,
  SHWY_ERR_TRANSPORT = 5,
  SHWY_ERR_PARSE = 6,
  SHWY_ERR_INTERNAL = 7,
  SHWY_ERR_BUFFER_TOO_SMALL = 8
} shwy_status;

typedef enum shwy_policy_kind {
  SHWY_POLICY_RL = 0,
  SHWY_POLICY_LLM = 1,
  SHWY_POLICY_HYBRID = 2
} shwy_policy_kind;

typedef enum shwy_report_format { SHWY_REPORT_JSON = 0, SHWY_REPORT_CSV = 1 } shwy_report_format;

typedef enum shwy_log_level {
  SHWY_LOG_DEBUG = 0,
  SHWY_LOG_INFO = 1,
  SHWY_LOG_WARNING = 2,
  SHWY_LOG_ERROR = 3,
  SHWY_LOG_OFF = 4
} shwy_log_level;

typedef struct shwy_settings shwy_settings;
typedef struct shwy_model shwy_model;
typedef struct shwy_train_log shwy_train_log;
typedef struct shwy_report shwy_report;

typedef struct shwy_train_counters {
  int64_t env_steps;
  uint64_t episodes;
  uint64_t gradient_steps;
  uint64_t target_syncs;
  uint64_t scorer_requests;
  uint64_t scorer_backend_calls;
  uint64_t scorer_cache_hits;
  uint64_t scorer_cache_misses;
  uint64_t scorer_fallbacks;
} shwy_train_counters;

typedef struct shwy_report_summary {
  int episodes;
  double success_rate;      /* percent */
  double lane_change_score; /* mean lane changes per episode */
  double mean_speed;        /* m/s */
  double speed_score;       /* [0, 1] */
  uint64_t llm_fallbacks;   /* LLM-only runs, else 0 */
} shwy_report_summary;

typedef struct shwy_fixture_summary {
  uint64_t items;
  uint64_t transport_errors;
  uint64_t parse_errors;
  uint64_t parsed;
} shwy_fixture_summary;

/* Library */
SHWY_API const char* shwy_version(void);
SHWY_API const char* shwy_last_error(void);
SHWY_API const char* shwy_status_name(shwy_status status);
SHWY_API void shwy_set_log_level(shwy_log_level level);

/* Settings: flat "section.key" registry. */
SHWY_API shwy_status shwy_settings_create(shwy_settings** out);
SHWY_API void shwy_settings_destroy(shwy_settings* settings);
SHWY_API shwy_status shwy_settings_set(shwy_settings* settings, const char* key, const char* value);
SHWY_API shwy_status shwy_settings_get(const shwy_settings* settings, const char* key, char* buf,
                                       size_t capacity, size_t* needed);
SHWY_API shwy_status shwy_settings_is_set(const shwy_settings* settings, const char* key,
                                          int* is_set);
SHWY_API shwy_status shwy_settings_load_file(shwy_settings* settings, const char* path);
/* Resolved value of every key as a JSON object. */
SHWY_API shwy_status shwy_settings_snapshot(const shwy_settings* settings, char* buf,
                                            size_t capacity, size_t* needed);
SHWY_API shwy_status shwy_settings_apply_snapshot(shwy_settings* settings, const char* json);
SHWY_API shwy_status shwy_settings_validate(const shwy_settings* settings);
SHWY_API size_t shwy_settings_key_count(void);
SHWY_API const char* shwy_settings_key_name(size_t index);
SHWY_API const char* shwy_settings_key_help(size_t index);

/* Training. progress_every > 0 logs a line to stderr every that many episodes. */
SHWY_API shwy_status shwy_train(const shwy_settings* settings, int progress_every,
                                shwy_model** model_out, shwy_train_log** log_out);
SHWY_API void shwy_train_log_destroy(shwy_train_log* log);
SHWY_API shwy_status shwy_train_log_write_csv(const shwy_train_log* log, const char* path);
SHWY_API shwy_status shwy_train_log_counters(const shwy_train_log* log, shwy_train_counters* out);

/* Models */
SHWY_API shwy_status shwy_model_load(const char* path, shwy_model** out);
SHWY_API shwy_status shwy_model_save(const shwy_model* model, const char* path);
SHWY_API void shwy_model_destroy(shwy_model* model);
/* Metadata JSON: scenario, shaping, lambda, scorer, training_steps, seed. */
SHWY_API shwy_status shwy_model_metadata(const shwy_model* model, char* buf, size_t capacity,
                                         size_t* needed);
/* Greedy action code (0-4) for an observation [speed, ttc_left, ttc_center, ttc_right]. */
SHWY_API shwy_status shwy_model_decide(const shwy_model* model, const double observation[4],
                                       int* action);

/* Evaluation over seeds 0..eval.episodes-1 of the configured scenario.
 * model must be NULL for SHWY_POLICY_LLM and non-NULL otherwise. */
SHWY_API shwy_status shwy_evaluate(const shwy_settings* settings, shwy_policy_kind kind,
                                   const shwy_model* model, shwy_report** out);
SHWY_API shwy_status shwy_report_load(const char* path, shwy_report** out);
SHWY_API shwy_status shwy_report_write(const shwy_report* report, const char* path,
                                       shwy_report_format format);
SHWY_API shwy_status shwy_report_summary_get(const shwy_report* report, shwy_report_summary* out);
SHWY_API void shwy_report_destroy(shwy_report* report);

/* Comparison table of two or more reports, written as text and CSV. */
SHWY_API shwy_status shwy_compare_write(const shwy_report* const* reports, size_t count,
                                        const char* text_path, const char* csv_path);

/* Replays the bundled probe set through the configured backend and stores
 * raw replies and parse outcomes in a new timestamped directory under
 * root_dir. The directory path is returned through buf. */
SHWY_API shwy_status shwy_record_fixtures(const shwy_settings* settings, const char* root_dir,
                                          char* buf, size_t capacity, size_t* needed,
                                          shwy_fixture_summary* summary);

#ifdef __cplusplus
}
#endif

#endif /* SHWY_H */
