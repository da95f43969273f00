#ifndef RAGMED_H
#define RAGMED_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/*
 Status codes; the nonzero values match the CLI exit codes where both
 exist.
 */
typedef enum RagmedStatus {
  RAGMED_STATUS_OK = 0,
  RAGMED_STATUS_NULL_ARGUMENT = 1,
  RAGMED_STATUS_INVALID_ARGUMENT = 2,
  RAGMED_STATUS_CONFIG = 3,
  RAGMED_STATUS_PROVIDER = 4,
  RAGMED_STATUS_DATA = 5,
  RAGMED_STATUS_PANIC = 6,
} RagmedStatus;

typedef struct RagmedResults RagmedResults;

typedef struct RagmedRetriever RagmedRetriever;

typedef struct RagmedStore RagmedStore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or NULL. Valid until the
 next failing call on the same thread.
 */
const char *ragmed_last_error(void);

/*
 Library version, a static string.
 */
const char *ragmed_version(void);

/*
 Segment a JSON-lines document file into a chunk store directory.

 # Safety
 `input` and `out_dir` are NUL-terminated strings.
 */
enum RagmedStatus ragmed_ingest(const char *input, const char *out_dir, bool strict_period_split);

/*
 Open a chunk store directory.

 # Safety
 `dir` is a NUL-terminated string; `out` is a valid pointer.
 */
enum RagmedStatus ragmed_store_open(const char *dir, struct RagmedStore **out);

/*
 Number of chunks; 0 for NULL.

 # Safety
 `store` is NULL or a live handle.
 */
size_t ragmed_store_len(const struct RagmedStore *store);

/*
 # Safety
 `store` is NULL or a handle from [`ragmed_store_open`], not yet freed.
 */
void ragmed_store_free(struct RagmedStore *store);

/*
 Open a retriever from a pipeline configuration file; `paths.store` and
 `paths.index` must be set. The configured retriever variant is used, or
 the hybrid one when the file disables retrieval.

 # Safety
 `config_path` is a NUL-terminated string; `out` is a valid pointer.
 */
enum RagmedStatus ragmed_retriever_open(const char *config_path, struct RagmedRetriever **out);

/*
 Open a retriever over a store and index with seeded mock encoders.

 # Safety
 `store` is a live handle; `index_dir` is a NUL-terminated string; `out`
 is a valid pointer.
 */
enum RagmedStatus ragmed_retriever_open_mock(const struct RagmedStore *store,
                                             const char *index_dir,
                                             uint64_t seed,
                                             struct RagmedRetriever **out);

/*
 # Safety
 `retriever` is NULL or a handle from a `ragmed_retriever_open*` call.
 */
void ragmed_retriever_free(struct RagmedRetriever *retriever);

/*
 Retrieve the top `k` passages. `variant` is NULL for the retriever's
 default or one of "bm25", "sparse", "dense", "sparse+dense",
 "sparse+rerank", "dense+rerank", "hybrid".

 # Safety
 `retriever` is a live handle; `query` (and `variant` unless NULL) are
 NUL-terminated strings; `out` is a valid pointer.
 */
enum RagmedStatus ragmed_search(const struct RagmedRetriever *retriever,
                                const char *query,
                                const char *variant,
                                size_t k,
                                struct RagmedResults **out);

/*
 # Safety
 `results` is NULL or a live handle.
 */
size_t ragmed_results_len(const struct RagmedResults *results);

/*
 Chunk id of hit `i`, or NULL when out of range. Owned by `results`.

 # Safety
 `results` is NULL or a live handle.
 */
const char *ragmed_results_chunk_id(const struct RagmedResults *results, size_t i);

/*
 Text of hit `i`, or NULL when out of range. Owned by `results`.

 # Safety
 `results` is NULL or a live handle.
 */
const char *ragmed_results_text(const struct RagmedResults *results, size_t i);

/*
 Score of hit `i`, or NaN when out of range.

 # Safety
 `results` is NULL or a live handle.
 */
double ragmed_results_score(const struct RagmedResults *results, size_t i);

/*
 # Safety
 `results` is NULL or a handle from [`ragmed_search`], not yet freed.
 */
void ragmed_results_free(struct RagmedResults *results);

/*
 Parse a reader completion against the options, given as a JSON object
 of label to text. Writes the label and a NUL into `label_out`, which
 must hold 2 bytes. An empty string means no answer could be parsed.

 # Safety
 `completion` and `options_json` are NUL-terminated strings; `label_out`
 points to at least 2 writable bytes.
 */
enum RagmedStatus ragmed_parse_answer(const char *completion,
                                      const char *options_json,
                                      char *label_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RAGMED_H */
