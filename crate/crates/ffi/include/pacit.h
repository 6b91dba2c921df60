#ifndef PACIT_H
#define PACIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PacitStatus {
  PACIT_STATUS_OK = 0,
  PACIT_STATUS_NULL_POINTER = 1,
  PACIT_STATUS_INVALID_UTF8 = 2,
  PACIT_STATUS_IO = 3,
  PACIT_STATUS_PARSE = 4,
  PACIT_STATUS_VALIDATION = 5,
  PACIT_STATUS_TEMPLATE = 6,
  PACIT_STATUS_LOSS = 7,
  PACIT_STATUS_METRIC = 8,
  PACIT_STATUS_GENERATION = 9,
  PACIT_STATUS_OUT_OF_RANGE = 10,
  PACIT_STATUS_PANIC = 11,
} PacitStatus;

typedef enum PacitVariant {
  PACIT_VARIANT_PACIT = 0,
  PACIT_VARIANT_PACIT_NO_ACTION = 1,
  PACIT_VARIANT_SUPERNI_FEWSHOT = 2,
  PACIT_VARIANT_ZERO_SHOT = 3,
  /**
   * Classification and answering sub-samples.
   */
  PACIT_VARIANT_SEPARATED = 4,
} PacitVariant;

/**
 * Opaque packer handle.
 */
typedef struct PacitPacker PacitPacker;

/**
 * Opaque task handle.
 */
typedef struct PacitTask PacitTask;

typedef struct PacitRouge {
  double precision;
  double recall;
  double f_measure;
} PacitRouge;

typedef struct PacitLoss {
  double l_c;
  double l_a;
  double total;
  size_t classification_tokens;
  size_t answer_tokens;
} PacitLoss;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, statically allocated. Do not free.
 */
const char *pacit_version(void);

/**
 * Message of the last failed call on this thread, or NULL. Free with
 * `pacit_string_free`.
 */
char *pacit_last_error_message(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library, freed at most once.
 */
void pacit_string_free(char *s);

/**
 * Loads a task JSON file; the task id is the file stem.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out_task` must be writable.
 */
enum PacitStatus pacit_task_load(const char *path, struct PacitTask **out_task);

/**
 * Parses a task from JSON text.
 *
 * # Safety
 * `task_id` and `json` must be NUL-terminated strings; `out_task` writable.
 */
enum PacitStatus pacit_task_parse(const char *task_id,
                                  const char *json,
                                  struct PacitTask **out_task);

/**
 * # Safety
 * `task` must be NULL or a handle from `pacit_task_load`/`pacit_task_parse`.
 */
void pacit_task_free(struct PacitTask *task);

/**
 * # Safety
 * `task` must be a live handle; out-pointers writable.
 */
enum PacitStatus pacit_task_sizes(const struct PacitTask *task,
                                  size_t *out_instances,
                                  size_t *out_positive,
                                  size_t *out_negative);

/**
 * Packer with the builtin scaffold, default action and whitespace length
 * measure.
 *
 * # Safety
 * `out_packer` must be writable.
 */
enum PacitStatus pacit_packer_new(size_t max_input_units,
                                  size_t max_output_units,
                                  bool stage_headers,
                                  struct PacitPacker **out_packer);

/**
 * # Safety
 * `packer` must be NULL or a handle from `pacit_packer_new`.
 */
void pacit_packer_free(struct PacitPacker *packer);

/**
 * Packs one instance of `task`. Writes a JSON array of samples (two for
 * `Separated` when examples survive, otherwise one).
 *
 * # Safety
 * Handles must be live; `out_json` writable. Free the result with
 * `pacit_string_free`.
 */
enum PacitStatus pacit_packer_assemble(const struct PacitPacker *packer,
                                       const struct PacitTask *task,
                                       size_t instance_index,
                                       enum PacitVariant variant,
                                       size_t k_pos,
                                       size_t k_neg,
                                       uint64_t seed,
                                       char **out_json);

/**
 * # Safety
 * String arguments must be NUL-terminated; `out_score` writable.
 */
enum PacitStatus pacit_rouge_l(const char *reference,
                               const char *hypothesis,
                               struct PacitRouge *out_score);

/**
 * Parses a generation into labels, action and answer; writes JSON.
 *
 * # Safety
 * `generation` must be NUL-terminated; `out_json` writable.
 */
enum PacitStatus pacit_parse_output(const char *generation,
                                    size_t expected_examples,
                                    char **out_json);

/**
 * Masked negative log-likelihood over per-token log-probabilities.
 * Token ranges are half-open; pass `has_classification = false` when the
 * sample has no classification span.
 *
 * # Safety
 * `logprobs` must point to `n` doubles (may be NULL when `n == 0`);
 * `out_loss` writable.
 */
enum PacitStatus pacit_masked_nll(const double *logprobs,
                                  size_t n,
                                  bool has_classification,
                                  size_t classification_start,
                                  size_t classification_end,
                                  size_t answer_start,
                                  size_t answer_end,
                                  double lambda,
                                  struct PacitLoss *out_loss);

/**
 * # Safety
 * `xs` and `ys` must each point to `n` doubles; `out_r` writable.
 */
enum PacitStatus pacit_pearson(const double *xs, const double *ys, size_t n, double *out_r);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PACIT_H */
