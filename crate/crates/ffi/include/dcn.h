#ifndef DCN_H
#define DCN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every entry point.
 */
typedef enum DcnStatus {
  DCN_STATUS_OK = 0,
  DCN_STATUS_NULL_ARGUMENT = 1,
  DCN_STATUS_INVALID_UTF8 = 2,
  DCN_STATUS_CONFIG = 3,
  DCN_STATUS_SHAPE = 4,
  DCN_STATUS_INPUT = 5,
  DCN_STATUS_NUMERICAL = 6,
  DCN_STATUS_FORMAT = 7,
  DCN_STATUS_IO = 8,
  DCN_STATUS_BUFFER_TOO_SMALL = 9,
  DCN_STATUS_PANIC = 10,
} DcnStatus;

/**
 * Opaque model handle.
 */
typedef struct DcnModel DcnModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on this thread.
 */
const char *dcn_last_error(void);

/**
 * Fresh model from a JSON config; null `config_json` means defaults.
 *
 * # Safety
 * `config_json` must be null or a valid string; `out` must be writable.
 */
enum DcnStatus dcn_model_new(const char *config_json, struct DcnModel **out);

/**
 * Loads a checkpoint directory.
 *
 * # Safety
 * `dir` must be a valid string; `out` must be writable.
 */
enum DcnStatus dcn_model_load(const char *dir, struct DcnModel **out);

/**
 * Writes a checkpoint directory.
 *
 * # Safety
 * `model` must come from this library; `dir` must be a valid string.
 */
enum DcnStatus dcn_model_save(const struct DcnModel *model, const char *dir);

/**
 * Releases a handle; null is ignored.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void dcn_model_free(struct DcnModel *model);

/**
 * Number of learnable scalars held by the model.
 *
 * # Safety
 * `model` must come from this library; `out` must be writable.
 */
enum DcnStatus dcn_model_num_params(const struct DcnModel *model, uintptr_t *out);

/**
 * Number of answer classes, i.e. the length of a score vector.
 *
 * # Safety
 * `model` must come from this library; `out` must be writable.
 */
enum DcnStatus dcn_model_num_answers(const struct DcnModel *model, uintptr_t *out);

/**
 * Analytic parameter count for a JSON config (null means defaults).
 *
 * # Safety
 * `config_json` must be null or a valid string; `out` must be writable.
 */
enum DcnStatus dcn_count_params(const char *config_json, uintptr_t *out);

/**
 * `lr * 0.5^(epoch / decay_epochs)`; NaN for invalid arguments.
 */
double dcn_lr_at(double epoch, double lr, double decay_epochs);

/**
 * Answer probabilities for one synthetic sample given as JSON (the format
 * written by `dcn gen-data`). Writes `*n_out` scores into `scores`, which
 * must hold at least `capacity` doubles; reports `BufferTooSmall` with the
 * required length in `*n_out` otherwise.
 *
 * # Safety
 * `model` must come from this library, `sample_json` a valid string,
 * `scores` writable for `capacity` doubles and `n_out` writable.
 */
enum DcnStatus dcn_model_predict(const struct DcnModel *model,
                                 const char *sample_json,
                                 double *scores,
                                 uintptr_t capacity,
                                 uintptr_t *n_out);

/**
 * Exact-match accuracy on the test split generated from the model's config.
 *
 * # Safety
 * `model` must come from this library; `accuracy` must be writable.
 */
enum DcnStatus dcn_model_evaluate(const struct DcnModel *model, double *accuracy);

/**
 * Trains a fresh model from `config_json` (null means defaults) and
 * returns it in `out`. With a non-null `out_dir` the metric log and best
 * checkpoint are written there.
 *
 * # Safety
 * `config_json` and `out_dir` must be null or valid strings; `out` and
 * `best_accuracy` must be writable.
 */
enum DcnStatus dcn_train(const char *config_json,
                         const char *out_dir,
                         struct DcnModel **out,
                         double *best_accuracy);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DCN_H */
