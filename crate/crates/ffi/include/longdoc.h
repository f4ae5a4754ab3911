#ifndef LONGDOC_H
#define LONGDOC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LdStatus {
  LD_STATUS_OK = 0,
  LD_STATUS_NULL_POINTER = 1,
  LD_STATUS_INVALID_ARGUMENT = 2,
  LD_STATUS_IO = 3,
  LD_STATUS_CHECKPOINT = 4,
  LD_STATUS_MALFORMED = 5,
  LD_STATUS_BUFFER_TOO_SMALL = 6,
  LD_STATUS_INTERNAL = 7,
} LdStatus;

/**
 * A loaded checkpoint plus its vocabulary.
 */
typedef struct LdModel LdModel;

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next call into this library from the same thread.
 */
const char *ld_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ld_version(void);

/**
 * Number of chunks for `k` tokens, chunk size `c` and overlap `z`.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum LdStatus ld_chunk_count(size_t k, size_t c, size_t z, size_t *out);

/**
 * Writes the encoder pass sizes for `n` chunks into `passes` (capacity
 * `cap`) and their count into `out_len`. With `passes` NULL only the count
 * is reported.
 *
 * # Safety
 * `out_len` must be valid for writes; `passes`, if not NULL, for `cap` writes.
 */
enum LdStatus ld_plan_passes(size_t n, size_t max_c, size_t *passes, size_t cap, size_t *out_len);

/**
 * Loads a checkpoint and its vocabulary file.
 *
 * # Safety
 * Paths must be NUL-terminated; `out` must be valid for writes. On success
 * `*out` owns a handle that must be released with `ld_model_free`.
 */
enum LdStatus ld_model_load(const char *checkpoint_path,
                            const char *vocab_path,
                            struct LdModel **out);

/**
 * Releases a model handle. NULL is ignored.
 *
 * # Safety
 * `model` must come from `ld_model_load` and not be used afterwards.
 */
void ld_model_free(struct LdModel *model);

/**
 * Chunk size the model was trained with.
 *
 * # Safety
 * `model` must be a live handle; `out` valid for writes.
 */
enum LdStatus ld_model_chunk_size(const struct LdModel *model, size_t *out);

/**
 * Tokenizes `text` with the model vocabulary and classifies it.
 *
 * # Safety
 * `model` must be a live handle, `text` NUL-terminated, outputs valid for writes.
 */
enum LdStatus ld_model_predict_text(const struct LdModel *model,
                                    const char *text,
                                    double *out_probability,
                                    uint8_t *out_label);

/**
 * Macro-averaged F1 over classes 0 and 1.
 *
 * # Safety
 * `predictions` and `labels` must hold `n` bytes each; `out` valid for writes.
 */
enum LdStatus ld_macro_f1(const uint8_t *predictions, const uint8_t *labels, size_t n, double *out);

/**
 * Matthews correlation coefficient.
 *
 * # Safety
 * `predictions` and `labels` must hold `n` bytes each; `out` valid for writes.
 */
enum LdStatus ld_mcc(const uint8_t *predictions, const uint8_t *labels, size_t n, double *out);

/**
 * Two-sided Wilcoxon signed-rank p-value for paired samples.
 *
 * # Safety
 * `a` and `b` must hold `n` doubles each; `out_p` valid for writes.
 */
enum LdStatus ld_wilcoxon(const double *a, const double *b, size_t n, double *out_p);

/**
 * Holm step-down decisions; `out_reject[i]` is 1 when `pvals[i]` is rejected.
 *
 * # Safety
 * `pvals` must hold `n` doubles and `out_reject` room for `n` bytes.
 */
enum LdStatus ld_holm(const double *pvals, size_t n, double alpha, uint8_t *out_reject);

#endif  /* LONGDOC_H */
