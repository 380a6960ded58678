#ifndef FILTERNET_H
#define FILTERNET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of a C API call.
 */
typedef enum {
  FILTERNET_STATUS_OK = 0,
  FILTERNET_STATUS_NULL_POINTER = 1,
  FILTERNET_STATUS_INVALID_UTF8 = 2,
  FILTERNET_STATUS_INVALID_ARGUMENT = 3,
  FILTERNET_STATUS_IO_ERROR = 4,
  FILTERNET_STATUS_FORMAT_ERROR = 5,
  FILTERNET_STATUS_INTERNAL_ERROR = 6,
} FilternetStatus;

/**
 * Opaque handle around a loaded checkpoint and its network.
 */
typedef struct FilternetModel FilternetModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *filternet_last_error(void);

/**
 * Library version as a static C string.
 */
const char *filternet_version(void);

/**
 * Load a checkpoint file into a newly allocated model handle.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid pointer.
 */
FilternetStatus filternet_model_load(const char *path, FilternetModel **out);

/**
 * Release a handle returned by [`filternet_model_load`]. A null pointer
 * is a no-op.
 *
 * # Safety
 * `model` must come from `filternet_model_load` and not be freed twice.
 */
void filternet_model_free(FilternetModel *model);

/**
 * Lookback window length the model was trained with.
 *
 * # Safety
 * `model` must be a live handle.
 */
uintptr_t filternet_model_lookback(const FilternetModel *model);

/**
 * Forecast horizon length.
 *
 * # Safety
 * `model` must be a live handle.
 */
uintptr_t filternet_model_horizon(const FilternetModel *model);

/**
 * Number of input channels.
 *
 * # Safety
 * `model` must be a live handle.
 */
uintptr_t filternet_model_channels(const FilternetModel *model);

/**
 * Forecast one window. `input` holds `channels x lookback` values in row
 * major order (channel rows), in the dataset's original units; `output`
 * receives `channels x horizon` forecast values, same layout and units.
 *
 * # Safety
 * `input`/`output` must point to buffers of the stated lengths.
 */
FilternetStatus filternet_model_predict(const FilternetModel *model,
                                        const double *input,
                                        uintptr_t input_len,
                                        double *output,
                                        uintptr_t output_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FILTERNET_H */
