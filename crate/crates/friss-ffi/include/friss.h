#ifndef FRISS_H
#define FRISS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes shared with the generated header.
 */
typedef enum FrissStatus {
  FrissStatus_Ok = 0,
  FrissStatus_NullArgument = 1,
  FrissStatus_InvalidUtf8 = 2,
  FrissStatus_Io = 3,
  FrissStatus_BadCheckpoint = 4,
  FrissStatus_BadDocument = 5,
  FrissStatus_Internal = 6,
} FrissStatus;

/**
 * Opaque trained-model handle: parameters plus everything needed to go from
 * raw document JSON to predictions.
 */
typedef struct FrissModel FrissModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Load a trained checkpoint. On success writes a handle to `out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FrissStatus friss_model_load(const char *path, struct FrissModel **out);

/**
 * Release a model handle. Null is a no-op.
 *
 * # Safety
 * `model` must come from [`friss_model_load`] and not be used afterwards.
 */
void friss_model_free(struct FrissModel *model);

/**
 * Predict the frame of one JSON-encoded document. On success writes a
 * caller-owned JSON string to `out`.
 *
 * # Safety
 * `model` must be a live handle; `doc_json` a NUL-terminated string; `out`
 * a valid pointer.
 */
enum FrissStatus friss_predict_json(const struct FrissModel *model,
                                    const char *doc_json,
                                    char **out);

/**
 * Render one JSON-encoded document as standalone highlighted HTML.
 *
 * # Safety
 * Same contract as [`friss_predict_json`].
 */
enum FrissStatus friss_highlight_html(const struct FrissModel *model,
                                      const char *doc_json,
                                      char **out);

/**
 * Message for the most recent failure on this thread. Valid until the next
 * failing call; never null.
 */
const char *friss_last_error(void);

/**
 * Release a string returned by this library. Null is a no-op.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void friss_string_free(char *s);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* FRISS_H */
