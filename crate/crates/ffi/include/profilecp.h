#ifndef PROFILECP_H
#define PROFILECP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum PcpStatus {
  PCP_STATUS_OK = 0,
  PCP_STATUS_NULL_ARGUMENT = 1,
  PCP_STATUS_INVALID_UTF8 = 2,
  PCP_STATUS_INVALID_INPUT = 3,
  PCP_STATUS_IO = 4,
  PCP_STATUS_EMPTY_STORE = 5,
  PCP_STATUS_EMPTY_PROFILE = 6,
  PCP_STATUS_CONFIG = 7,
  PCP_STATUS_PANIC = 8,
} PcpStatus;

// Outcome of a solved problem, mirroring the CLI exit codes.
typedef enum PcpOutcome {
  PCP_OUTCOME_SOLVED = 0,
  PCP_OUTCOME_FAILED = 1,
  PCP_OUTCOME_INFRA_ERROR = 2,
} PcpOutcome;

typedef struct PcpOntology PcpOntology;

typedef struct PcpPipeline PcpPipeline;

typedef struct PcpProfile PcpProfile;

typedef struct PcpStore PcpStore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or null. Owned by the library.
const char *pcp_last_error_message(void);

// # Safety
// `s` must come from this library, or be null.
void pcp_string_free(char *s);

// Library version as a static string.
const char *pcp_version(void);

// The built-in constraint ontology.
//
// # Safety
// `out` must be valid for a write.
enum PcpStatus pcp_ontology_default(struct PcpOntology **out);

// # Safety
// `path` must be a NUL-terminated string; `out` valid for a write.
enum PcpStatus pcp_ontology_load(const char *path, struct PcpOntology **out);

// # Safety
// `o` must come from this library, or be null.
void pcp_ontology_free(struct PcpOntology *o);

// Number of constraint types; 0 for null.
//
// # Safety
// `o` must be a live handle or null.
size_t pcp_ontology_len(const struct PcpOntology *o);

// Parses an analyzer answer (a bracketed list, or free text) into a profile.
//
// # Safety
// Pointers must be valid; `raw` NUL-terminated.
enum PcpStatus pcp_profile_parse(const struct PcpOntology *ontology,
                                 const char *raw,
                                 struct PcpProfile **out);

// Builds a profile from comma-separated names. Unknown names are an error.
//
// # Safety
// Pointers must be valid; `names` NUL-terminated.
enum PcpStatus pcp_profile_from_names(const struct PcpOntology *ontology,
                                      const char *names,
                                      struct PcpProfile **out);

// # Safety
// `p` must come from this library, or be null.
void pcp_profile_free(struct PcpProfile *p);

// # Safety
// `p` must be a live handle or null.
size_t pcp_profile_len(const struct PcpProfile *p);

// Canonical names joined by ", ". Free with `pcp_string_free`.
//
// # Safety
// Pointers must be valid.
enum PcpStatus pcp_profile_render(const struct PcpProfile *p, char **out);

// |A ∩ B| / |A ∪ B|; 0 when both are empty.
//
// # Safety
// Pointers must be valid.
enum PcpStatus pcp_jaccard(const struct PcpProfile *a, const struct PcpProfile *b, double *out);

// Cosine similarity of two vectors of length `len`.
//
// # Safety
// `u` and `v` must point to `len` floats each.
enum PcpStatus pcp_cosine(const float *u, const float *v, size_t len, double *out);

// Loads an exemplar store (JSON Lines) validated against `ontology`.
//
// # Safety
// Pointers must be valid; `path` NUL-terminated.
enum PcpStatus pcp_store_load(const char *path,
                              const struct PcpOntology *ontology,
                              struct PcpStore **out);

// # Safety
// `s` must come from this library, or be null.
void pcp_store_free(struct PcpStore *s);

// # Safety
// `s` must be a live handle or null.
size_t pcp_store_len(const struct PcpStore *s);

// Top-`k` exemplars by profile overlap, as a JSON array of `{"id","score"}`.
// `exclude` may be null. An empty profile is `EmptyProfile`; embedding
// fallback needs a backend and is only available through a pipeline.
//
// # Safety
// Pointers must be valid; strings NUL-terminated.
enum PcpStatus pcp_carm_retrieve(const struct PcpStore *store,
                                 const struct PcpProfile *profile,
                                 size_t k,
                                 const char *exclude,
                                 char **out_json);

// Closed-form tree size for `w` roots, beam `m`, depth `n`.
uint64_t pcp_predicted_node_count(size_t w, size_t m, size_t n);

// Seconds: k·(L·f + T_solver + T_CARM), times the tree size when
// `with_tree` is non-zero.
//
// # Safety
// `out_seconds` must be valid for a write.
enum PcpStatus pcp_cost_upper_bound(uint64_t k,
                                    int32_t with_tree,
                                    size_t w,
                                    size_t m,
                                    size_t n,
                                    double l_gen_tokens,
                                    double f_token_s,
                                    double t_solver_s,
                                    double t_carm_s,
                                    double *out_seconds);

// Builds a pipeline from a config file: stores, backends and runner.
//
// # Safety
// Pointers must be valid; `config_path` NUL-terminated.
enum PcpStatus pcp_pipeline_from_config(const char *config_path, struct PcpPipeline **out);

// # Safety
// `p` must come from this library, or be null.
void pcp_pipeline_free(struct PcpPipeline *p);

// Solves one problem given as JSON. The report JSON goes to `out_report`
// and the outcome to `out_outcome`; infrastructure failures are an outcome,
// not a status.
//
// # Safety
// Pointers must be valid; `problem_json` NUL-terminated.
enum PcpStatus pcp_solve_problem(const struct PcpPipeline *pipeline,
                                 const char *problem_json,
                                 char **out_report,
                                 enum PcpOutcome *out_outcome);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PROFILECP_H */
