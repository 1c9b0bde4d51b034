#ifndef WEIGHTPRESS_H
#define WEIGHTPRESS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum WpStatus {
  WP_STATUS_OK = 0,
  WP_STATUS_NULL_POINTER = 1,
  WP_STATUS_INVALID_ARGUMENT = 2,
  WP_STATUS_IO = 3,
  /**
   * Malformed, corrupt or inconsistent container data.
   */
  WP_STATUS_FORMAT = 4,
  WP_STATUS_SHAPE = 5,
  WP_STATUS_BUFFER_TOO_SMALL = 6,
  WP_STATUS_INTERNAL = 7,
} WpStatus;

/**
 * Loaded container plus its decoded execution form. Opaque to C.
 */
typedef struct WpModel WpModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread, or NULL. Valid until the next call.
 */
const char *wp_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *wp_version(void);

/**
 * Loads a container file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum WpStatus wp_model_load(const char *path, struct WpModel **out);

/**
 * Parses a container from memory.
 *
 * # Safety
 * `data` must point to `len` readable bytes and `out` must be a valid pointer.
 */
enum WpStatus wp_model_from_bytes(const uint8_t *data, size_t len, struct WpModel **out);

/**
 * Releases a model. NULL is ignored.
 *
 * # Safety
 * `model` must come from `wp_model_load` or `wp_model_from_bytes` and not be freed twice.
 */
void wp_model_free(struct WpModel *model);

/**
 * # Safety
 * `model` must be a live model and `out` a valid pointer.
 */
enum WpStatus wp_model_layer_count(const struct WpModel *model, size_t *out);

/**
 * Output rows and input columns of layer `index`.
 *
 * # Safety
 * `model` must be a live model; `rows` and `cols` valid pointers.
 */
enum WpStatus wp_model_layer_shape(const struct WpModel *model,
                                   size_t index,
                                   size_t *rows,
                                   size_t *cols);

/**
 * Class probabilities for `batch` row-major inputs, computed with the compressed kernels.
 *
 * # Safety
 * `input` must hold `batch * input_dim` floats and `output` `output_len` writable floats.
 */
enum WpStatus wp_model_forward(const struct WpModel *model,
                               const float *input,
                               size_t batch,
                               float *output,
                               size_t output_len);

/**
 * Dense row-major weights of layer `index` as stored (after decoding).
 *
 * # Safety
 * `model` must be a live model and `output` must hold `output_len` writable floats.
 */
enum WpStatus wp_model_reconstruct_layer(const struct WpModel *model,
                                         size_t index,
                                         float *output,
                                         size_t output_len);

/**
 * Per-layer storage table as CSV. Free the string with `wp_string_free`.
 *
 * # Safety
 * `model` must be a live model and `out` a valid pointer.
 */
enum WpStatus wp_model_stats_csv(const struct WpModel *model, char **out);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void wp_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WEIGHTPRESS_H */
