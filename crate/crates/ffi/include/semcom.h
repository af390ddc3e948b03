#ifndef SEMCOM_H
#define SEMCOM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SemcomStatus {
  SEMCOM_STATUS_OK = 0,
  SEMCOM_STATUS_NULL_POINTER = 1,
  SEMCOM_STATUS_INVALID_ARGUMENT = 2,
  SEMCOM_STATUS_DIM_MISMATCH = 3,
  SEMCOM_STATUS_IO = 4,
  SEMCOM_STATUS_FORMAT = 5,
  SEMCOM_STATUS_NOT_FOUND = 6,
  SEMCOM_STATUS_CONFIG = 7,
  SEMCOM_STATUS_BUFFER_TOO_SMALL = 8,
  SEMCOM_STATUS_PANIC = 9,
} SemcomStatus;

typedef enum SemcomChannelMode {
  SEMCOM_CHANNEL_MODE_ANALOG = 0,
  SEMCOM_CHANNEL_MODE_DIGITAL16QAM = 1,
} SemcomChannelMode;

// A stateful noisy channel with its own random stream.
typedef struct SemcomChannel SemcomChannel;

// A trained model loaded from a stage-two checkpoint.
typedef struct SemcomModel SemcomModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *semcom_version(void);

// Copies the calling thread's last error message into `buf`, truncating if
// needed. Returns the buffer size required for the full message.
//
// # Safety
// `buf` must be null or valid for `len` bytes.
size_t semcom_last_error_message(char *buf, size_t len);

// Harmonic mean of seen and unseen accuracy.
//
// # Safety
// `out` must be a valid pointer.
enum SemcomStatus semcom_harmonic_mean(double seen, double unseen, double *out);

// Loads a checkpoint that has completed stage two.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum SemcomStatus semcom_model_load(const char *path, struct SemcomModel **out);

// # Safety
// `m` must be null or a handle from [`semcom_model_load`] not yet freed.
void semcom_model_free(struct SemcomModel *m);

// Feature, semantic and channel-symbol widths plus the symbol standard
// deviation measured during training. Any output pointer may be null.
//
// # Safety
// `m` must be a live handle; non-null outputs must be valid.
enum SemcomStatus semcom_model_dims(const struct SemcomModel *m,
                                    size_t *feature,
                                    size_t *semantic,
                                    size_t *symbols,
                                    double *sigma_s);

// Number of candidate categories, seen and unseen together.
//
// # Safety
// `m` must be a live handle and `out` valid.
enum SemcomStatus semcom_model_category_count(const struct SemcomModel *m, size_t *out);

// Copies the label of category `index` into `buf` and reports whether it
// was seen in training. `needed` receives the buffer size required; the
// call fails with `BUFFER_TOO_SMALL` when `len` is short.
//
// # Safety
// `m` must be a live handle; `buf` valid for `len` bytes; other outputs
// null or valid.
enum SemcomStatus semcom_model_category(const struct SemcomModel *m,
                                        size_t index,
                                        char *buf,
                                        size_t len,
                                        size_t *needed,
                                        bool *seen);

// Encodes `rows` feature vectors into power-normalized channel symbols.
// `out` holds `rows * symbols` values.
//
// # Safety
// `features` must hold `rows * cols` values and `out` `rows * symbols`.
enum SemcomStatus semcom_model_transmit(const struct SemcomModel *m,
                                        const double *features,
                                        size_t rows,
                                        size_t cols,
                                        double *out);

// Decodes received symbols into semantic vectors. `out` holds
// `rows * semantic` values.
//
// # Safety
// `symbols` must hold `rows * cols` values and `out` `rows * semantic`.
enum SemcomStatus semcom_model_receive(const struct SemcomModel *m,
                                       const double *symbols,
                                       size_t rows,
                                       size_t cols,
                                       double *out);

// Nearest-embedding category index for each semantic vector.
//
// # Safety
// `semantics` must hold `rows * cols` values and `out` `rows` indices.
enum SemcomStatus semcom_model_classify(const struct SemcomModel *m,
                                        const double *semantics,
                                        size_t rows,
                                        size_t cols,
                                        size_t *out);

// Creates a channel. `qam_bits` and `sigma_s` set the quantizer of the
// digital mode (clip range of four symbol deviations) and are ignored in
// analog mode.
//
// # Safety
// `out` must be a valid pointer.
enum SemcomStatus semcom_channel_new(enum SemcomChannelMode mode,
                                     double snr_db,
                                     double gain,
                                     uint64_t seed,
                                     uint32_t qam_bits,
                                     double sigma_s,
                                     struct SemcomChannel **out);

// # Safety
// `c` must be null or a handle from [`semcom_channel_new`] not yet freed.
void semcom_channel_free(struct SemcomChannel *c);

// Passes `rows * cols` symbols through the channel, advancing its random
// stream. `out` has the same shape as the input.
//
// # Safety
// `c` must be a live handle; `symbols` and `out` must hold `rows * cols`
// values and may not overlap.
enum SemcomStatus semcom_channel_transmit(struct SemcomChannel *c,
                                          const double *symbols,
                                          size_t rows,
                                          size_t cols,
                                          double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEMCOM_H */
