#ifndef MTLVM_H
#define MTLVM_H

#pragma once

/* Generated by cbindgen from crates/ffi. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MtlvmStatus {
  MTLVM_STATUS_OK = 0,
  MTLVM_STATUS_NULL_POINTER = 1,
  MTLVM_STATUS_INVALID_UTF8 = 2,
  MTLVM_STATUS_IO = 3,
  MTLVM_STATUS_PARSE = 4,
  MTLVM_STATUS_CONFIG = 5,
  MTLVM_STATUS_PRECONDITION = 6,
  MTLVM_STATUS_OUT_OF_RANGE = 7,
  MTLVM_STATUS_INVARIANT = 8,
  MTLVM_STATUS_BUFFER_TOO_SMALL = 9,
  MTLVM_STATUS_PANIC = 10,
} MtlvmStatus;

/**
 * Loaded corpus.
 */
typedef struct MtlvmCorpus MtlvmCorpus;

/**
 * Trained or training MTLVM model; independent of the corpus it came from.
 */
typedef struct MtlvmModel MtlvmModel;

typedef struct MtlvmCorpusStats {
  uint64_t documents;
  uint64_t entities;
  uint64_t units;
  uint64_t chains;
  uint64_t vocab_size;
} MtlvmCorpusStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next call into this library on the same thread.
 */
const char *mtlvm_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mtlvm_version(void);

/**
 * Load a corpus from `.json` or a `.jsonl` record stream.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum MtlvmStatus mtlvm_corpus_load(const char *path, struct MtlvmCorpus **out);

/**
 * # Safety
 * `corpus` must come from `mtlvm_corpus_load` and not be used afterwards.
 */
void mtlvm_corpus_free(struct MtlvmCorpus *corpus);

/**
 * # Safety
 * `corpus` must be a live handle; `out` must be writable.
 */
enum MtlvmStatus mtlvm_corpus_stats(const struct MtlvmCorpus *corpus, struct MtlvmCorpusStats *out);

/**
 * Initialize a model from a TOML hyperparameter document (NULL for the
 * defaults). No sweeps are run.
 *
 * # Safety
 * `corpus` must be a live handle; `config_toml` NULL or NUL-terminated; `out` writable.
 */
enum MtlvmStatus mtlvm_model_new(const struct MtlvmCorpus *corpus,
                                 const char *config_toml,
                                 struct MtlvmModel **out);

/**
 * Restore a model from a checkpoint file written for `corpus`.
 *
 * # Safety
 * As for `mtlvm_model_new`.
 */
enum MtlvmStatus mtlvm_model_load(const struct MtlvmCorpus *corpus,
                                  const char *path,
                                  struct MtlvmModel **out);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void mtlvm_model_free(struct MtlvmModel *model);

/**
 * Run `sweeps` Gibbs sweeps.
 *
 * # Safety
 * `model` must be a live handle.
 */
enum MtlvmStatus mtlvm_model_run(struct MtlvmModel *model, size_t sweeps);

/**
 * # Safety
 * `model` must be a live handle; `path` NUL-terminated.
 */
enum MtlvmStatus mtlvm_model_save(const struct MtlvmModel *model, const char *path);

/**
 * Writes the number of states, units and vocabulary entries; any pointer may be NULL.
 *
 * # Safety
 * `model` must be a live handle.
 */
enum MtlvmStatus mtlvm_model_dims(const struct MtlvmModel *model,
                                  size_t *n_states,
                                  size_t *n_units,
                                  size_t *vocab_size);

/**
 * Current state of every unit (entity-major, epoch order), `len >= n_units`.
 *
 * # Safety
 * `out` must hold `len` values.
 */
enum MtlvmStatus mtlvm_model_states(const struct MtlvmModel *model, uint32_t *out, size_t len);

/**
 * Posterior-mean transition matrix, row-major, `len >= C * C`.
 *
 * # Safety
 * `out` must hold `len` values.
 */
enum MtlvmStatus mtlvm_model_transitions(const struct MtlvmModel *model, double *out, size_t len);

/**
 * Next-token distribution of `state` over the vocabulary, `len >= V`.
 *
 * # Safety
 * `out` must hold `len` values.
 */
enum MtlvmStatus mtlvm_model_state_tokens(const struct MtlvmModel *model,
                                          size_t state,
                                          double *out,
                                          size_t len);

/**
 * Joint log-probability of the current configuration.
 *
 * # Safety
 * `out` must be writable.
 */
enum MtlvmStatus mtlvm_model_log_prob(const struct MtlvmModel *model, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MTLVM_H */
