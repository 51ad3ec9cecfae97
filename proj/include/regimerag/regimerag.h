#ifndef REGIMERAG_H
#define REGIMERAG_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define RR_API __declspec(dllexport)
#else
#define RR_API __attribute__((visibility("default")))
#endif

/* Status codes double as process exit codes for the command-line tool. */
typedef enum rr_status {
  RR_OK = 0,
  RR_ERR_USAGE = 2,   /* invalid argument, configuration, or call sequence */
  RR_ERR_DATA = 3,    /* invalid, corrupt, or missing data */
  RR_ERR_BACKEND = 4  /* forecaster backend failed */
} rr_status;

typedef struct rr_kb rr_kb;
typedef struct rr_engine rr_engine;

/* Message of the last failure on the calling thread ("" if none). Valid until
 * the next call on the same thread. */
RR_API const char* rr_last_error(void);
/* Name of the last error kind on the calling thread, e.g. "DuplicatePath". */
RR_API const char* rr_last_error_kind(void);
/* Frees strings returned through char** out parameters. */
RR_API void rr_string_free(char* s);
RR_API const char* rr_version(void);

/* ---- knowledge base ---- */

/* Empty KB with the MP/IP/N2 schema. */
RR_API rr_status rr_kb_create(size_t regime_len, rr_kb** out);
RR_API rr_status rr_kb_load(const char* dir, rr_kb** out);
RR_API rr_status rr_kb_save(const rr_kb* kb, const char* dir);
RR_API void rr_kb_free(rr_kb* kb);
RR_API size_t rr_kb_size(const rr_kb* kb);
RR_API size_t rr_kb_regime_len(const rr_kb* kb);
RR_API size_t rr_kb_variables(const rr_kb* kb);
/* values: rows x variables, row-major, raw units. */
RR_API rr_status rr_kb_ingest(rr_kb* kb, const char* path, const double* values, size_t rows,
                              size_t cols, const double* timestamps);
/* Copies sample values (regime_len x variables) into `values`. */
RR_API rr_status rr_kb_sample(const rr_kb* kb, const char* path, double* values, size_t capacity);
/* Column statistics and MI cache as JSON. */
RR_API rr_status rr_kb_describe(const rr_kb* kb, char** json_out);

/* Ingests every <g>/<d>/<r>/<id>.csv below `tree_dir` into a new store at
 * `out_dir` (which may equal `tree_dir`) and caches mutual information. */
RR_API rr_status rr_build_kb(const char* tree_dir, const char* out_dir, int truncate_tail,
                             size_t* samples_out);

/* ---- engine ---- */

/* config_json may be NULL for defaults. The KB must outlive the engine. */
RR_API rr_status rr_engine_create(const rr_kb* kb, const char* config_json, rr_engine** out);
RR_API void rr_engine_free(rr_engine* engine);
RR_API size_t rr_engine_history_len(const rr_engine* engine);
RR_API size_t rr_engine_horizon(const rr_engine* engine);
/* Fused retrieval weights (regime_len x variables) into `weights`. */
RR_API rr_status rr_engine_weights(const rr_engine* engine, double* weights, size_t capacity);

/* history: history_len x variables; future_covariates: horizon x covariates
 * (schema covariate order). Results are JSON documents. `origin_path` may be
 * NULL; it resolves relative scopes ("@plane", "@group"). */
RR_API rr_status rr_retrieve(const rr_engine* engine, const double* history,
                             const double* future_covariates, const char* origin_path,
                             char** json_out);
/* prediction receives `horizon` values. chain_csv_out, when not NULL,
 * receives the spliced context as CSV. */
RR_API rr_status rr_forecast(const rr_engine* engine, const double* history,
                             const double* future_covariates, const char* origin_path,
                             double* prediction, size_t capacity, char** json_out,
                             char** chain_csv_out);
/* Same, reading the query from a CSV file (header timestamp + variables,
 * regime_len rows, future target cells may be empty). */
RR_API rr_status rr_retrieve_csv(const rr_engine* engine, const char* query_csv,
                                 const char* origin_path, char** json_out);
RR_API rr_status rr_forecast_csv(const rr_engine* engine, const char* query_csv,
                                 const char* origin_path, char** json_out, char** chain_csv_out);

/* ---- synthetic fleet, evaluation, detection ---- */

/* Writes <out_dir>/kb, <out_dir>/queries and <out_dir>/labels.csv. */
RR_API rr_status rr_synth(const char* fleet_config_json, const char* out_dir, char** summary_json);

/* suite: weighting | metric | kb-scope | context-k | covariate. Writes the
 * result CSV (and <stem>_kstar.csv for context-k); refuses to overwrite
 * unless `force`. table_text receives a human-readable rendering. */
RR_API rr_status rr_evaluate(const char* suite, const char* kb_dir, const char* queries_dir,
                             const char* labels_csv, const char* config_json,
                             const char* out_csv, int force, char** table_text);

/* policy: "default" calibrates on the labelled calibration split, otherwise
 * a policy JSON file. Writes alerts as JSON lines and the deviation timeline
 * CSV; policy_out (optional) receives the policy in effect. */
RR_API rr_status rr_detect(const char* kb_dir, const char* queries_dir, const char* labels_csv,
                           const char* config_json, const char* policy, const char* alerts_out,
                           const char* timeline_out, const char* policy_out, size_t* alerts);
/* Monitors a device,timestamp,deviation CSV with a policy JSON file. */
RR_API rr_status rr_detect_stream(const char* deviation_csv, const char* policy_file,
                                  const char* alerts_out, size_t* alerts);

#ifdef __cplusplus
}
#endif

#endif
