#ifndef SPANLOC_H
#define SPANLOC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SpanlocStatus {
  SPANLOC_STATUS_OK = 0,
  SPANLOC_STATUS_NULL_ARGUMENT = 1,
  SPANLOC_STATUS_INVALID_UTF8 = 2,
  SPANLOC_STATUS_IO = 3,
  SPANLOC_STATUS_INVALID_ARGUMENT = 4,
  SPANLOC_STATUS_SHAPE = 5,
  SPANLOC_STATUS_PANIC = 6,
} SpanlocStatus;

/**
 * Opaque handle to a loaded locator.
 */
typedef struct SpanlocLocator SpanlocLocator;

/**
 * Inclusive turn range.
 */
typedef struct SpanlocSpan {
  size_t start;
  size_t end;
} SpanlocSpan;

/**
 * Raw regression output plus its discretized span.
 */
typedef struct SpanlocPrediction {
  double start_raw;
  double end_raw;
  struct SpanlocSpan span;
} SpanlocPrediction;

typedef struct SpanlocScore {
  double precision;
  double recall;
  double f1;
} SpanlocScore;

typedef struct SpanlocRouge {
  struct SpanlocScore r1;
  struct SpanlocScore r2;
  struct SpanlocScore rl;
} SpanlocRouge;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next library call on the same thread.
 */
const char *spanloc_last_error(void);

/**
 * Static, NUL-terminated library version.
 */
const char *spanloc_version(void);

/**
 * Loads a checkpoint file into `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SpanlocStatus spanloc_locator_load(const char *path, struct SpanlocLocator **out);

/**
 * # Safety
 * `locator` must come from [`spanloc_locator_load`] and not be used after.
 */
void spanloc_locator_free(struct SpanlocLocator *locator);

/**
 * Embedding dimension the locator expects, or 0 for a null handle.
 *
 * # Safety
 * `locator` must be null or a live handle.
 */
size_t spanloc_locator_input_dim(const struct SpanlocLocator *locator);

/**
 * Runs the locator on row-major embeddings: `transcript` holds one averaged
 * vector per turn (`turns` × `dim`), `query` one vector per query token
 * (`query_tokens` × `dim`).
 *
 * # Safety
 * The arrays must hold the stated number of doubles and `out` must be valid.
 */
enum SpanlocStatus spanloc_locator_predict(const struct SpanlocLocator *locator,
                                           const double *transcript,
                                           size_t turns,
                                           const double *query,
                                           size_t query_tokens,
                                           size_t dim,
                                           struct SpanlocPrediction *out);

/**
 * Rounds, clamps and orders a raw prediction for a meeting of `length` turns.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum SpanlocStatus spanloc_discretize(double start_raw,
                                      double end_raw,
                                      size_t length,
                                      struct SpanlocSpan *out);

/**
 * ROUGE-1, ROUGE-2 and ROUGE-L of `candidate` against `reference`, as
 * fractions in [0, 1].
 *
 * # Safety
 * Both strings must be NUL-terminated and `out` valid.
 */
enum SpanlocStatus spanloc_rouge(const char *candidate,
                                 const char *reference,
                                 struct SpanlocRouge *out);

/**
 * Transcript cleaning as used before embedding. Returns a new string in
 * `*out`, to be released with [`spanloc_string_free`].
 *
 * # Safety
 * `text` must be NUL-terminated and `out` valid.
 */
enum SpanlocStatus spanloc_preprocess(const char *text, char **out);

/**
 * # Safety
 * `s` must be null or a string returned by this library, freed once.
 */
void spanloc_string_free(char *s);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* SPANLOC_H */
