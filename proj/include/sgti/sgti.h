#ifndef SGTI_SGTI_H
#define SGTI_SGTI_H

#include <stdint.h>

#if defined(_WIN32)
#define SGTI_API __declspec(dllexport)
#else
#define SGTI_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum sgti_status {
  SGTI_OK = 0,
  SGTI_VALIDATION_ERROR = 1, /* bad config, input file or missing checkpoint */
  SGTI_INTERNAL_ERROR = 2
} sgti_status;

/* One run: a config plus the report of the last command. */
typedef struct sgti_run sgti_run;

/* preset: "desk", "overfit", "tiny" or "paper"; NULL means "desk". */
SGTI_API sgti_status sgti_run_create(const char *preset, sgti_run **out);
SGTI_API void sgti_run_destroy(sgti_run *run);

/* Replaces the config with the file's (key = value lines). */
SGTI_API sgti_status sgti_run_load_config(sgti_run *run, const char *path);
SGTI_API sgti_status sgti_run_set(sgti_run *run, const char *key,
                                  const char *value);
/* Canonical text of the current config; valid until the next call on run. */
SGTI_API const char *sgti_run_config(sgti_run *run);

/* stage: "vqvae", "sgt" or "imt". resume may be NULL. */
SGTI_API sgti_status sgti_train(sgti_run *run, const char *stage,
                                const char *resume);

typedef struct sgti_sample_options {
  const char *graph_path;
  double temperature;
  int32_t top_k;
  int32_t n;
  int32_t use_gt_layout;
} sgti_sample_options;
SGTI_API void sgti_sample_defaults(sgti_sample_options *options);
SGTI_API sgti_status sgti_sample(sgti_run *run,
                                 const sgti_sample_options *options);

SGTI_API sgti_status sgti_eval(sgti_run *run);
SGTI_API sgti_status sgti_ablate(sgti_run *run);
/* failures receives the number of failed checks. */
SGTI_API sgti_status sgti_gradcheck(sgti_run *run, int inject_matmul_fault,
                                    int32_t *failures);
/* Writes images/, graphs/ and manifest.txt of the configured dataset. */
SGTI_API sgti_status sgti_export_data(sgti_run *run, const char *dir);

/* Text report of the last successful command on run. */
SGTI_API const char *sgti_report(const sgti_run *run);
/* Message of the last failure on run; with run == NULL, of the last failed
   sgti_run_create on this thread. */
SGTI_API const char *sgti_last_error(const sgti_run *run);

#ifdef __cplusplus
}
#endif

#endif
