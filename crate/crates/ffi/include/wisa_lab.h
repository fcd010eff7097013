#ifndef WISA_LAB_H
#define WISA_LAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum WisaStatus {
  WISA_STATUS_OK = 0,
  WISA_STATUS_NULL_POINTER = 1,
  WISA_STATUS_INVALID_UTF8 = 2,
  WISA_STATUS_PARSE = 3,
  WISA_STATUS_SCHEMA = 4,
  WISA_STATUS_DIMENSION = 5,
  WISA_STATUS_NUMERIC = 6,
  WISA_STATUS_USAGE = 7,
  WISA_STATUS_IO = 8,
  WISA_STATUS_BUFFER_TOO_SMALL = 9,
  WISA_STATUS_PANIC = 10,
  WISA_STATUS_OTHER = 11,
} WisaStatus;

// A parsed physical annotation.
typedef struct WisaAnnotation WisaAnnotation;

// A loaded model checkpoint.
typedef struct WisaModel WisaModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or null. Valid until the next
// failing call on the same thread.
const char *wisa_last_error_message(void);

// Number of physical categories (and gate entries).
size_t wisa_num_categories(void);

// Splits `value` into a coefficient in [1, 10) (or 0) and a decimal exponent.
//
// # Safety
// `coefficient` and `exponent` must be valid for writes.
enum WisaStatus wisa_sci_encode(double value, double *coefficient, int32_t *exponent);

// # Safety
// `value` must be valid for writes.
enum WisaStatus wisa_sci_decode(double coefficient, int32_t exponent, double *value);

// Parses annotation JSON (`len` bytes, UTF-8, no terminator needed).
//
// # Safety
// `json` must point to `len` readable bytes and `handle` must be valid for writes.
enum WisaStatus wisa_annotation_parse(const uint8_t *json,
                                      size_t len,
                                      struct WisaAnnotation **handle);

// # Safety
// `handle` must be null or come from [`wisa_annotation_parse`] and not be freed twice.
void wisa_annotation_free(struct WisaAnnotation *handle);

// Counts rule violations; `strict` also enforces the group rules.
//
// # Safety
// `handle` must be a live annotation and `count` valid for writes.
enum WisaStatus wisa_annotation_validate(const struct WisaAnnotation *handle,
                                         bool strict,
                                         size_t *count);

// Writes the annotation's gate (one 0/1 entry per category) into `gate`,
// which must hold at least [`wisa_num_categories`] values.
//
// # Safety
// `handle` must be a live annotation and `gate` valid for `len` writes.
enum WisaStatus wisa_annotation_gating(const struct WisaAnnotation *handle,
                                       double *gate,
                                       size_t len);

// Canonical JSON of the annotation as a NUL-terminated string owned by the
// caller (release with [`wisa_string_free`]).
//
// # Safety
// `handle` must be a live annotation and `json` valid for writes.
enum WisaStatus wisa_annotation_to_json(const struct WisaAnnotation *handle, char **json);

// # Safety
// `s` must be null or a string returned by this library, freed once.
void wisa_string_free(char *s);

// Training-time gate perturbation of a binary gate: each entry flips
// (1 to 0.1, 0 to 1) with probability `prob`, drawn from `seed`.
//
// # Safety
// `gate` must hold `len` readable values and `perturbed` `len` writable ones.
enum WisaStatus wisa_perturb(const double *gate,
                             size_t len,
                             double prob,
                             uint64_t seed,
                             double *perturbed);

// Loads a checkpoint written by `wisa-lab train`.
//
// # Safety
// `path` must be a NUL-terminated string and `handle` valid for writes.
enum WisaStatus wisa_model_load(const char *path, struct WisaModel **handle);

// # Safety
// `handle` must be null or come from [`wisa_model_load`] and not be freed twice.
void wisa_model_free(struct WisaModel *handle);

// Clip geometry the model expects, as frames, height, width.
//
// # Safety
// `handle` must be a live model and `shape` valid for three writes.
enum WisaStatus wisa_model_clip_shape(const struct WisaModel *handle, size_t *shape);

// Category probabilities for a clip in [-1, 1] (row-major frames, height,
// width) read as the noisy input at `timestep`, with empty text and zero
// quantitative properties. A null `gate` means all ones.
//
// # Safety
// `clip` must hold `clip_len` values, `gate` (if not null) the category
// count, and `probabilities` `prob_len` writable values.
enum WisaStatus wisa_model_classify(const struct WisaModel *handle,
                                    const double *clip,
                                    size_t clip_len,
                                    size_t timestep,
                                    const double *gate,
                                    double *probabilities,
                                    size_t prob_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WISA_LAB_H */
