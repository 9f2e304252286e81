/* SPDX-License-Identifier: Apache-2.0 */
#ifndef POLYSEARCH_POLYSEARCH_H
#define POLYSEARCH_POLYSEARCH_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  define PS_API __declspec(dllexport)
#else
#  define PS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ps_status {
  PS_OK = 0,
  PS_ERR_INVALID_ARGUMENT = 1, /* malformed input, failed precondition */
  PS_ERR_NOT_FOUND = 2,
  PS_ERR_IO = 3,
  PS_ERR_CONFLICT = 4,         /* duplicate id */
  PS_ERR_NUMERIC = 5,          /* non-finite loss or gradient */
  PS_ERR_INTERNAL = 6
} ps_status;

PS_API const char* ps_version(void);

/* Message of the last failed call on this thread; "" when none. Valid until
 * the next failing call on the same thread. */
PS_API const char* ps_last_error(void);

/* Frees strings returned through char** out-parameters. NULL is a no-op. */
PS_API void ps_string_free(char* s);

/* ---- word tables and alignment ------------------------------------------ */

typedef struct ps_table ps_table;
typedef struct ps_alignment ps_alignment;

/* word2vec text format; tokens are lowercased. */
PS_API ps_status ps_table_load(const char* path, const char* lang, ps_table** out);
PS_API void ps_table_free(ps_table* table);
PS_API ps_status ps_table_shape(const ps_table* table, int64_t* size, int64_t* dim);
/* PS_ERR_NOT_FOUND when the token is out of vocabulary. */
PS_API ps_status ps_table_lookup(const ps_table* table, const char* token, double* out, size_t out_len);

/* Orthogonal map from `source` into `target` fitted on a TSV seed dictionary
 * (source_token, target_token). */
PS_API ps_status ps_align_procrustes(const ps_table* source, const ps_table* target, const char* dictionary_path,
                                     ps_alignment** out);
/* Given a->pivot and b->pivot, returns a->b. */
PS_API ps_status ps_align_compose(const ps_alignment* a_to_pivot, const ps_alignment* b_to_pivot, ps_alignment** out);
PS_API ps_status ps_alignment_load(const char* path, ps_alignment** out);
PS_API ps_status ps_alignment_save(const ps_alignment* map, const char* path);
PS_API void ps_alignment_free(ps_alignment* map);
PS_API ps_status ps_alignment_dim(const ps_alignment* map, int64_t* dim);
/* Row-major dim x dim matrix. */
PS_API ps_status ps_alignment_matrix(const ps_alignment* map, double* out, size_t out_len);
/* max |W^T W - I|. */
PS_API ps_status ps_alignment_orthogonality_error(const ps_alignment* map, double* out);

/* ---- model ---------------------------------------------------------------- */

typedef struct ps_model ps_model;

/* `wordspace` may be NULL to use the path recorded in the checkpoint. */
PS_API ps_status ps_model_load(const char* checkpoint, const char* wordspace, ps_model** out);
PS_API void ps_model_free(ps_model* model);
PS_API ps_status ps_model_joint_dim(const ps_model* model, int64_t* dim);
/* JSON array of language codes. */
PS_API ps_status ps_model_languages(const ps_model* model, char** out_json);
PS_API ps_status ps_model_encode_text(const ps_model* model, const char* text, const char* lang, double* out,
                                      size_t out_len);
PS_API ps_status ps_model_encode_fmap(const ps_model* model, const char* fmap_path, double* out, size_t out_len);
/* Activation map of one word over a feature map, as "json" (H x W nested
 * array) or "pgm" (plain P2 image, [-1, 1] mapped onto [0, 255]). */
PS_API ps_status ps_model_heatmap(const ps_model* model, const char* word, const char* lang, const char* fmap_path,
                                  const char* format, char** out);

/* ---- index ---------------------------------------------------------------- */

typedef struct ps_index ps_index;
typedef struct ps_results ps_results;

/* Encodes every image and caption of a manifest into one index. */
PS_API ps_status ps_index_build(const ps_model* model, const char* manifest_path, ps_index** out);
PS_API ps_status ps_index_load(const char* path, ps_index** out);
PS_API ps_status ps_index_save(const ps_index* index, const char* path);
PS_API void ps_index_free(ps_index* index);
PS_API ps_status ps_index_counts(const ps_index* index, size_t* images, size_t* captions);

/* Text query against the indexed images. */
PS_API ps_status ps_index_query_text(const ps_index* index, const ps_model* model, const char* text, const char* lang,
                                     size_t k, ps_results** out);
/* Feature-map query against the indexed captions. */
PS_API ps_status ps_index_query_fmap(const ps_index* index, const ps_model* model, const char* fmap_path, size_t k,
                                     ps_results** out);

PS_API size_t ps_results_count(const ps_results* results);
/* NULL / NaN when i is out of range. Text and lang are "" for images. */
PS_API const char* ps_results_id(const ps_results* results, size_t i);
PS_API double ps_results_score(const ps_results* results, size_t i);
PS_API const char* ps_results_text(const ps_results* results, size_t i);
PS_API const char* ps_results_lang(const ps_results* results, size_t i);
PS_API void ps_results_free(ps_results* results);

/* ---- workflows -------------------------------------------------------------- */

/* `spec_path` may be NULL for the default toy spec. `summary_json` lists the
 * written files. */
PS_API ps_status ps_make_toy_data(const char* spec_path, const char* out_dir, char** summary_json);

typedef void (*ps_epoch_callback)(int epoch, const char* stage, double mean_loss, double learning_rate, void* user);

/* Trains on `manifest` with a JSON training config; writes checkpoint.json
 * into `out_dir` after every epoch. `callback` may be NULL. */
PS_API ps_status ps_train(const char* manifest, const char* config_path, const char* out_dir,
                          ps_epoch_callback callback, void* user, char** summary_json);

/* Recall@{1,5,10} of a checkpoint on a manifest. Either output may be NULL. */
PS_API ps_status ps_evaluate(const char* checkpoint, const char* manifest, size_t eval_batch_size, char** report_json,
                             char** report_table);

/* component: "text", "image", "loss" or "full". */
PS_API ps_status ps_gradcheck(const char* component, double tolerance, uint64_t seed, int* passed, char** report_json);

typedef void (*ps_listen_callback)(int port, void* user);

/* Blocks serving HTTP until the process ends. */
PS_API ps_status ps_serve(const char* config_path, ps_listen_callback callback, void* user);

#ifdef __cplusplus
}
#endif

#endif /* POLYSEARCH_POLYSEARCH_H */
