#ifndef SELFTRAIN_H
#define SELFTRAIN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Class codes used by [`st_weighted_f1`].
 */
#define ST_LABEL_POSITIVE 0

#define ST_LABEL_NEGATIVE 1

/**
 * Result code of every fallible call.
 */
typedef enum StStatus {
  ST_STATUS_OK = 0,
  ST_STATUS_NULL_POINTER = 1,
  ST_STATUS_INVALID_UTF8 = 2,
  ST_STATUS_INVALID_ARGUMENT = 3,
  ST_STATUS_IO = 4,
  ST_STATUS_BACKEND = 5,
  ST_STATUS_PANIC = 6,
} StStatus;

/**
 * Input file format for [`st_corpus_load`].
 */
typedef enum StFormat {
  ST_FORMAT_AUTO = 0,
  ST_FORMAT_JSONL = 1,
  ST_FORMAT_TOKEN_TAGGED = 2,
} StFormat;

/**
 * A parsed corpus.
 */
typedef struct StCorpus StCorpus;

/**
 * The built-in hashed n-gram classifier.
 */
typedef struct StModel StModel;

/**
 * Outcome of [`st_run`].
 */
typedef struct StRunResult StRunResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next library call on the same thread.
 */
const char *st_last_error(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library and not yet freed.
 */
void st_string_free(char *s);

/**
 * Reads a corpus file, lowercases and NFC-normalizes it, drops URL tokens
 * and, when `two_class` is true, neutral-gold utterances.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum StStatus st_corpus_load(const char *path,
                             enum StFormat format,
                             bool two_class,
                             struct StCorpus **out);

/**
 * Number of utterances, or 0 for NULL.
 *
 * # Safety
 * `corpus` must be NULL or a live handle.
 */
size_t st_corpus_len(const struct StCorpus *corpus);

/**
 * # Safety
 * `corpus` must be NULL or a handle not yet freed.
 */
void st_corpus_free(struct StCorpus *corpus);

/**
 * Generates the synthetic train/test/source corpora described by
 * `spec_json` (NULL for defaults).
 *
 * # Safety
 * `spec_json` must be NULL or NUL-terminated; the three outputs must be writable.
 */
enum StStatus st_synth_generate(const char *spec_json,
                                struct StCorpus **train,
                                struct StCorpus **test,
                                struct StCorpus **source);

/**
 * Creates an untrained built-in model from a JSON backend configuration
 * (`learning_rate`, `hash_dim`, `ngram_max`, `seed`; NULL for defaults).
 *
 * # Safety
 * `config_json` must be NULL or NUL-terminated; `out` must be writable.
 */
enum StStatus st_model_new_builtin(const char *config_json, struct StModel **out);

/**
 * Supervised pre-training on the gold labels of `source`.
 *
 * # Safety
 * Both handles must be live.
 */
enum StStatus st_model_pretrain(struct StModel *model,
                                const struct StCorpus *source,
                                size_t epochs);

/**
 * Writes P(positive) of every utterance, in corpus order, to `p_positive`,
 * which must hold `len` values; `len` must equal the corpus length.
 *
 * # Safety
 * Handles must be live and `p_positive` must point to `len` writable doubles.
 */
enum StStatus st_model_predict(const struct StModel *model,
                               const struct StCorpus *corpus,
                               double *p_positive,
                               size_t len);

/**
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void st_model_free(struct StModel *model);

/**
 * Runs self-training of `model` on `corpus`. `config_json` is a run
 * configuration (the `backend` section is ignored; NULL for defaults).
 * `heldout` may be NULL. The model keeps its fine-tuned weights.
 *
 * A run that ends because the model diverged still succeeds; inspect
 * [`st_run_result_stop_reason`].
 *
 * # Safety
 * Handles must be live or NULL where allowed; `out` must be writable.
 */
enum StStatus st_run(struct StModel *model,
                     const struct StCorpus *corpus,
                     const char *config_json,
                     const struct StCorpus *heldout,
                     struct StRunResult **out);

/**
 * Number of selection rounds, or 0 for NULL.
 *
 * # Safety
 * `result` must be NULL or a live handle.
 */
size_t st_run_result_rounds(const struct StRunResult *result);

/**
 * Number of pseudo-labeled utterances, or 0 for NULL.
 *
 * # Safety
 * `result` must be NULL or a live handle.
 */
size_t st_run_result_labeled(const struct StRunResult *result);

/**
 * Stop reason as text, e.g. `exhausted` or `ratio-stop(positive)`. Free with
 * [`st_string_free`]. NULL for a NULL handle.
 *
 * # Safety
 * `result` must be NULL or a live handle.
 */
char *st_run_result_stop_reason(const struct StRunResult *result);

/**
 * The run report (stop reason, counts, per-round history) as JSON. Free with
 * [`st_string_free`]. NULL for a NULL handle.
 *
 * # Safety
 * `result` must be NULL or a live handle.
 */
char *st_run_result_report_json(const struct StRunResult *result);

/**
 * Writes the pseudo-labels as JSON lines to `path`.
 *
 * # Safety
 * `result` must be a live handle; `path` must be NUL-terminated.
 */
enum StStatus st_run_result_export(const struct StRunResult *result, const char *path);

/**
 * # Safety
 * `result` must be NULL or a handle not yet freed.
 */
void st_run_result_free(struct StRunResult *result);

/**
 * Support-weighted F1 of `pred` against `gold` (class codes
 * `ST_LABEL_POSITIVE` / `ST_LABEL_NEGATIVE`).
 *
 * # Safety
 * `gold` and `pred` must point to `len` readable values; `out` must be writable.
 */
enum StStatus st_weighted_f1(const int32_t *gold, const int32_t *pred, size_t len, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SELFTRAIN_H */
