#ifndef DRUMDIFF_H
#define DRUMDIFF_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum DdStatus {
  DD_STATUS_OK = 0,
  DD_STATUS_NULL_POINTER = 1,
  DD_STATUS_INVALID_ARGUMENT = 2,
  DD_STATUS_IO = 3,
  DD_STATUS_CHECKPOINT = 4,
  DD_STATUS_NUMERIC = 5,
  DD_STATUS_DATA = 6,
  DD_STATUS_PANIC = 7,
} DdStatus;

/**
 * A trained denoiser loaded from a checkpoint.
 */
typedef struct DdModel DdModel;

/**
 * A sorted list of drum hits.
 */
typedef struct DdNotes DdNotes;

/**
 * Sampling options; obtain defaults from [`dd_infer_options_default`].
 */
typedef struct DdInferOptions {
  /**
   * Sampling steps for transcription.
   */
  uint32_t steps;
  /**
   * Sampling steps for generation.
   */
  uint32_t fill_steps;
  uint64_t seed;
  double threshold;
} DdInferOptions;

/**
 * One hit as seen from C.
 */
typedef struct DdNote {
  double time;
  uint32_t component;
  uint8_t velocity;
} DdNote;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *dd_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *dd_version(void);

struct DdInferOptions dd_infer_options_default(void);

/**
 * Load a model from a training checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DdStatus dd_model_load(const char *path, struct DdModel **out);

/**
 * # Safety
 * `model` must come from [`dd_model_load`] and not be used afterwards.
 */
void dd_model_free(struct DdModel *model);

/**
 * Transcribe mono PCM at 44.1 kHz.
 *
 * # Safety
 * `samples` must point to `n_samples` floats; `opts` and `out` must be valid.
 */
enum DdStatus dd_transcribe_pcm(const struct DdModel *model,
                                const float *samples,
                                size_t n_samples,
                                uint32_t sample_rate,
                                const struct DdInferOptions *opts,
                                struct DdNotes **out);

/**
 * Sample a pattern of `n_frames` 10 ms frames without any audio.
 *
 * # Safety
 * `model`, `opts` and `out` must be valid pointers.
 */
enum DdStatus dd_generate(const struct DdModel *model,
                          size_t n_frames,
                          const struct DdInferOptions *opts,
                          struct DdNotes **out);

/**
 * Build a note list from `n` hits, e.g. reference labels for scoring.
 *
 * # Safety
 * `notes` must point to `n` hits and `out` must be valid.
 */
enum DdStatus dd_notes_new(const struct DdNote *notes, size_t n, struct DdNotes **out);

/**
 * Number of hits, or 0 for null.
 *
 * # Safety
 * `notes` must be null or a live handle.
 */
size_t dd_notes_len(const struct DdNotes *notes);

/**
 * Copy hit `i` into `out`.
 *
 * # Safety
 * `notes` must be a live handle and `out` valid.
 */
enum DdStatus dd_notes_get(const struct DdNotes *notes, size_t i, struct DdNote *out);

/**
 * Write the hits as a General MIDI percussion file.
 *
 * # Safety
 * `notes` must be a live handle and `path` NUL-terminated.
 */
enum DdStatus dd_notes_write_midi(const struct DdNotes *notes, const char *path);

/**
 * Onset and velocity F1 of `est` against `reference` with the default
 * 50 ms tolerance.
 *
 * # Safety
 * Both handles must be live; `onset_f1` and `velocity_f1` valid.
 */
enum DdStatus dd_score(const struct DdNotes *reference,
                       const struct DdNotes *est,
                       double *onset_f1,
                       double *velocity_f1);

/**
 * # Safety
 * `notes` must be null or a live handle, not used afterwards.
 */
void dd_notes_free(struct DdNotes *notes);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* DRUMDIFF_H */
