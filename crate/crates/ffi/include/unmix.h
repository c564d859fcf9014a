#ifndef UNMIX_H
#define UNMIX_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum UnmixStatus {
  UNMIX_STATUS_OK = 0,
  // A required pointer argument was null.
  UNMIX_STATUS_NULL_POINTER = 1,
  // Arguments or configuration rejected.
  UNMIX_STATUS_INVALID_ARGUMENT = 2,
  // File could not be read or written, or has an unsupported layout.
  UNMIX_STATUS_IO = 3,
  // Not enough samples or frames for the requested operation.
  UNMIX_STATUS_INSUFFICIENT_DATA = 4,
  // Statistics were degenerate or the data were not finite.
  UNMIX_STATUS_NUMERICAL = 5,
  // The caller's buffer is too small; the required size was reported.
  UNMIX_STATUS_BUFFER_TOO_SMALL = 6,
  // Internal failure (a caught panic).
  UNMIX_STATUS_INTERNAL = 7,
} UnmixStatus;

// Incremental dynamic separator (opaque).
typedef struct UnmixSeparator UnmixSeparator;

// Multichannel signal (opaque).
typedef struct UnmixSignal UnmixSignal;

// Separation parameters. Obtain defaults from [`unmix_config_preset`].
typedef struct UnmixConfig {
  // Frame length `T`.
  uint32_t frame_len;
  // Fraction of a frame shared by consecutive frames, in `[0, 1)`.
  double overlap;
  // Frames in the statistics window.
  uint32_t window_frames;
  // Frames the window advances per update.
  uint32_t stride_frames;
  // Frames used for order/sign alignment between updates.
  uint32_t align_frames;
  // Minimum frame count for batch processing.
  uint32_t batch_frames;
  uint32_t k0;
  uint32_t k1;
  uint32_t k2;
  double beta;
  uint32_t q;
  // 0: search the whole band for the reference bin, 1: use bin 4.
  uint32_t reference;
  // 0: maximum over lags, 1: sum over lags.
  uint32_t lag_sum;
} UnmixConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *unmix_last_error(void);

// Library version as a static NUL-terminated string.
const char *unmix_version(void);

// Fills `out` with parameter row 1, 2 or 3.
//
// # Safety
// `out` must point to writable memory for one `UnmixConfig`.
enum UnmixStatus unmix_config_preset(uint32_t case_index, struct UnmixConfig *out);

// Creates a signal from `frames * channels` interleaved samples.
//
// # Safety
// `samples` must point to `frames * channels` readable doubles and `out`
// to a writable handle slot.
enum UnmixStatus unmix_signal_new(const double *samples,
                                  size_t frames,
                                  size_t channels,
                                  uint32_t sample_rate,
                                  struct UnmixSignal **out);

// Reads a 16-bit PCM or 32-bit float WAV file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable handle slot.
enum UnmixStatus unmix_signal_read_wav(const char *path, struct UnmixSignal **out);

// Writes a WAV file: 16-bit PCM when `float32` is 0, else 32-bit float.
//
// # Safety
// `signal` must be a live handle and `path` a NUL-terminated string.
enum UnmixStatus unmix_signal_write_wav(const struct UnmixSignal *signal,
                                        const char *path,
                                        uint32_t float32);

// Samples per channel (0 for a null handle).
//
// # Safety
// `signal` must be null or a live handle.
size_t unmix_signal_len(const struct UnmixSignal *signal);

// Number of channels (0 for a null handle).
//
// # Safety
// `signal` must be null or a live handle.
size_t unmix_signal_channels(const struct UnmixSignal *signal);

// Sample rate in Hz (0 for a null handle).
//
// # Safety
// `signal` must be null or a live handle.
uint32_t unmix_signal_sample_rate(const struct UnmixSignal *signal);

// Copies channel `channel` into `buffer`. `*written` receives the channel
// length; if `capacity` is smaller, nothing is copied and
// `UNMIX_STATUS_BUFFER_TOO_SMALL` is returned.
//
// # Safety
// `signal` must be a live handle, `buffer` writable for `capacity`
// doubles (may be null when `capacity` is 0) and `written` writable.
enum UnmixStatus unmix_signal_copy_channel(const struct UnmixSignal *signal,
                                           size_t channel,
                                           double *buffer,
                                           size_t capacity,
                                           size_t *written);

// Releases a signal. Null is ignored.
//
// # Safety
// `signal` must be null or a handle not yet freed.
void unmix_signal_free(struct UnmixSignal *signal);

// Separates a stereo mixture in one call: dynamic (sliding window) when
// `batch` is 0, else batch. `*out` receives a new stereo signal.
//
// # Safety
// `mix` must be a live handle, `config` readable and `out` writable.
enum UnmixStatus unmix_separate(const struct UnmixSignal *mix,
                                const struct UnmixConfig *config,
                                uint32_t batch,
                                struct UnmixSignal **out);

// Creates a streaming separator for stereo input at `sample_rate`.
//
// # Safety
// `config` must be readable and `out` writable.
enum UnmixStatus unmix_separator_new(const struct UnmixConfig *config,
                                     uint32_t sample_rate,
                                     struct UnmixSeparator **out);

// Feeds `frames` samples per channel and returns the output samples that
// became final as a new stereo signal in `*out` (possibly of length 0).
//
// # Safety
// `separator` must be a live handle, `left`/`right` readable for `frames`
// doubles and `out` writable.
enum UnmixStatus unmix_separator_push(struct UnmixSeparator *separator,
                                      const double *left,
                                      const double *right,
                                      size_t frames,
                                      struct UnmixSignal **out);

// Output samples per channel delivered so far (0 for a null handle).
//
// # Safety
// `separator` must be null or a live handle.
size_t unmix_separator_emitted(const struct UnmixSeparator *separator);

// Releases a separator. Null is ignored.
//
// # Safety
// `separator` must be null or a handle not yet freed.
void unmix_separator_free(struct UnmixSeparator *separator);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UNMIX_H */
