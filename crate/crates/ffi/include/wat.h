#ifndef WAT_H
#define WAT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Rater codes for [`wat_score_text`].
 */
#define WAT_RATER_PATIENT 0

#define WAT_RATER_THERAPIST 1

/*
 Number of classes in a prediction.
 */
#define WAT_NUM_CLASSES 4

/*
 Result codes. Zero is success.
 */
typedef enum WatStatus {
  WAT_STATUS_OK = 0,
  WAT_STATUS_NULL_POINTER = 1,
  WAT_STATUS_INVALID_ARGUMENT = 2,
  WAT_STATUS_IO = 3,
  WAT_STATUS_PARSE = 4,
  WAT_STATUS_VALIDATION = 5,
  WAT_STATUS_EMBEDDING = 6,
  WAT_STATUS_MODEL = 7,
  WAT_STATUS_BUFFER_TOO_SMALL = 8,
  WAT_STATUS_PANIC = 9,
} WatStatus;

/*
 Opaque inventory handle.
 */
typedef struct WatInventory WatInventory;

/*
 Opaque trained-model handle.
 */
typedef struct WatModel WatModel;

/*
 Opaque embedding provider handle.
 */
typedef struct WatProvider WatProvider;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread, or NULL. Valid until the
 next call into this library on the same thread.
 */
const char *wat_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *wat_version(void);

/*
 # Safety
 `out` must be a valid pointer to writable storage for one handle.
 */
enum WatStatus wat_inventory_placeholder(struct WatInventory **out);

/*
 Loads an inventory JSONL file.

 # Safety
 `path` must be a NUL-terminated string; `out` as for [`wat_inventory_placeholder`].
 */
enum WatStatus wat_inventory_load(const char *path, struct WatInventory **out);

/*
 Items per rater; 0 for NULL.

 # Safety
 `inventory` must be NULL or a live handle.
 */
size_t wat_inventory_size(const struct WatInventory *inventory);

/*
 # Safety
 `inventory` must be NULL or a handle not yet freed.
 */
void wat_inventory_free(struct WatInventory *inventory);

/*
 Deterministic hash embedding provider of dimension `dim`.

 # Safety
 `out` must be a valid pointer to writable storage for one handle.
 */
enum WatStatus wat_provider_hash(size_t dim, uint64_t seed, struct WatProvider **out);

/*
 Provider backed by a precomputed vector file.

 # Safety
 `path` must be a NUL-terminated string; `out` as for [`wat_provider_hash`].
 */
enum WatStatus wat_provider_file(const char *path, struct WatProvider **out);

/*
 Provider speaking the remote embedding protocol at `endpoint`.

 # Safety
 `endpoint` must be a NUL-terminated string; `out` as for [`wat_provider_hash`].
 */
enum WatStatus wat_provider_remote(const char *endpoint, struct WatProvider **out);

/*
 Embedding dimension; 0 for NULL.

 # Safety
 `provider` must be NULL or a live handle.
 */
size_t wat_provider_dim(const struct WatProvider *provider);

/*
 # Safety
 `provider` must be NULL or a handle not yet freed.
 */
void wat_provider_free(struct WatProvider *provider);

/*
 Writes the embedding of `text` into `out[0..dim]`.

 # Safety
 `provider` must be a live handle, `text` a NUL-terminated string and `out`
 must point to `out_len` writable doubles.
 */
enum WatStatus wat_embed(const struct WatProvider *provider,
                         const char *text,
                         double *out,
                         size_t out_len);

/*
 Cosine similarity of two length-`len` vectors; 0 when either is zero.

 # Safety
 `a` and `b` must each point to `len` readable doubles; `out` to one writable double.
 */
enum WatStatus wat_cosine(const double *a, const double *b, size_t len, double *out);

/*
 Alliance scores of one turn against the inventory items of `rater`.
 Writes `wat_inventory_size(inventory)` values.

 # Safety
 Handles must be live, `text` NUL-terminated and `out` must point to
 `out_len` writable doubles.
 */
enum WatStatus wat_score_text(const struct WatProvider *provider,
                              const struct WatInventory *inventory,
                              const char *text,
                              uint32_t rater,
                              double *out,
                              size_t out_len);

/*
 Loads a checkpoint; its config digest is verified.

 # Safety
 `path` must be a NUL-terminated string; `out` must be a valid pointer to
 writable storage for one handle.
 */
enum WatStatus wat_model_load(const char *path, struct WatModel **out);

/*
 Per-step feature width the model expects; 0 for NULL.

 # Safety
 `model` must be NULL or a live handle.
 */
size_t wat_model_input_dim(const struct WatModel *model);

/*
 # Safety
 `model` must be NULL or a handle not yet freed.
 */
void wat_model_free(struct WatModel *model);

/*
 Classifies a row-major `[rows, cols]` feature matrix. Writes the class code
 (0 anxiety, 1 depression, 2 schizophrenia, 3 suicidal) and, when
 `probabilities` is not NULL, [`WAT_NUM_CLASSES`] probabilities.

 # Safety
 `model` must be a live handle, `features` must point to `rows * cols`
 readable doubles, `condition` to one writable `u32`, and `probabilities`
 to [`WAT_NUM_CLASSES`] writable doubles or be NULL.
 */
enum WatStatus wat_model_predict(const struct WatModel *model,
                                 const double *features,
                                 size_t rows,
                                 size_t cols,
                                 uint32_t *condition,
                                 double *probabilities);

/*
 Classifies one transcript session given as a single corpus JSON line, using
 the feature configuration and inventory stored in the checkpoint. On
 success `*out_json` receives `{"session_id","condition","probabilities"}`,
 to be released with [`wat_string_free`].

 # Safety
 Handles must be live, `session_json` NUL-terminated and `out_json` a valid
 pointer to writable storage for one string pointer.
 */
enum WatStatus wat_model_predict_session(const struct WatModel *model,
                                         const struct WatProvider *provider,
                                         const char *session_json,
                                         char **out_json);

/*
 Releases a string returned by this library.

 # Safety
 `s` must be NULL or a string returned by this library and not yet freed.
 */
void wat_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WAT_H */
