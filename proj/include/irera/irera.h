/*
 * C interface to the irera engine.
 *
 * Every call returns an irera_status. On failure, irera_last_error() holds a
 * message for the calling thread until its next failing call. Strings
 * returned through `char**` out-parameters are JSON documents owned by the
 * caller and released with irera_string_free().
 *
 * An engine handle must not be used from two threads at once.
 */
#ifndef IRERA_IRERA_H
#define IRERA_IRERA_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(IRERA_BUILDING_LIBRARY)
#    define IRERA_API __declspec(dllexport)
#  else
#    define IRERA_API __declspec(dllimport)
#  endif
#else
#  define IRERA_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum irera_status {
    IRERA_OK = 0,
    IRERA_ERR_INVALID_ARGUMENT = 1,
    IRERA_ERR_CONFIG = 2,
    IRERA_ERR_DATA = 3,      /* malformed records, ontologies, embeddings */
    IRERA_ERR_BACKEND = 4,   /* transport, rejected or malformed responses */
    IRERA_ERR_IO = 5,
    IRERA_ERR_BUDGET = 6,    /* budget check ran and failed */
    IRERA_ERR_INTERNAL = 7
} irera_status;

typedef struct irera_engine irera_engine;

IRERA_API const char* irera_version(void);
IRERA_API const char* irera_last_error(void);
IRERA_API const char* irera_status_name(irera_status status);
IRERA_API void irera_string_free(char* s);

/* Engine lifecycle. */
IRERA_API irera_status irera_engine_open(const char* config_path, irera_engine** out);
IRERA_API void irera_engine_close(irera_engine* engine);

/* Embeds every ontology label (or the lines of `texts_path`, when non-NULL)
 * and writes the embedding file named in the config. */
IRERA_API irera_status irera_engine_build_index(irera_engine* engine, const char* texts_path, char** report_json);

/* `program` is "irera", "infer-retrieve", "prior", "exact" or "retrieve".
 * `artifact_path` may be NULL to run the zero-shot seed program. */
IRERA_API irera_status irera_engine_run(irera_engine* engine, const char* program, const char* artifact_path,
                                        const char* const* texts, size_t count, size_t top,
                                        char** predictions_json);

IRERA_API irera_status irera_engine_optimize(irera_engine* engine, const char* artifact_out,
                                             char** budget_report_json);

/* `dataset` is "train", "validation", "test" or a file path. */
IRERA_API irera_status irera_engine_evaluate(irera_engine* engine, const char* program, const char* artifact_path,
                                             const char* dataset, char** report_json);

/* Re-verifies the budget recorded in an optimization or evaluation report.
 * Returns IRERA_ERR_BUDGET (with the result still written) when a bound
 * is violated. */
IRERA_API irera_status irera_budget_check(const char* report_json, char** result_json);

IRERA_API irera_status irera_engine_cache_stats(irera_engine* engine, char** stats_json);
IRERA_API irera_status irera_cache_stats(const char* cache_dir, char** stats_json);

/* Pure metric and scoring primitives. */

/* RP@k over n examples. rankings[i] has ranking_lengths[i] label ids; golds
 * likewise. */
IRERA_API irera_status irera_rp_at_k(const uint32_t* const* rankings, const size_t* ranking_lengths,
                                     const uint32_t* const* golds, const size_t* gold_lengths, size_t n,
                                     int64_t k, double* out);

/* out[i] = scores[i] * log10(a * priors[i] + 10). */
IRERA_API irera_status irera_apply_prior(const double* scores, const double* priors, size_t len, double a,
                                         double* out);

#ifdef __cplusplus
}
#endif

#endif /* IRERA_IRERA_H */
