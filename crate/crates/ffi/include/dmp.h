#ifndef DMP_FFI_H
#define DMP_FFI_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum DmpStatus {
  DMP_OK = 0,
  /**
   * A required pointer argument was null.
   */
  DMP_ERR_NULL = 1,
  /**
   * Bad arguments, shapes or file contents.
   */
  DMP_ERR_INVALID = 2,
  /**
   * Training diverged or a numerical routine failed.
   */
  DMP_ERR_NUMERICAL = 3,
  /**
   * File system failure.
   */
  DMP_ERR_IO = 4,
  /**
   * A bug inside the library; the handles involved should be freed.
   */
  DMP_ERR_PANIC = 5,
} DmpStatus;

/**
 * Opaque labeled dataset handle.
 */
typedef struct DmpDataset DmpDataset;

/**
 * Opaque model handle.
 */
typedef struct DmpModel DmpModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *dmp_last_error(void);

/**
 * Generates the Purchase-style synthetic corpus.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum DmpStatus dmp_dataset_synth(size_t n_samples,
                                 size_t n_features,
                                 size_t n_classes,
                                 double cluster_noise,
                                 uint64_t seed,
                                 struct DmpDataset **out);

/**
 * Reads a dataset file.
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` must be writable.
 */
enum DmpStatus dmp_dataset_load(const char *path, struct DmpDataset **out);

/**
 * Rows `[start, start + len)` as a new dataset.
 *
 * # Safety
 * `data` must be a live dataset handle; `out` must be writable.
 */
enum DmpStatus dmp_dataset_slice(const struct DmpDataset *data,
                                 size_t start,
                                 size_t len,
                                 struct DmpDataset **out);

/**
 * Number of rows, or 0 for a null handle.
 *
 * # Safety
 * `data` must be null or a live dataset handle.
 */
size_t dmp_dataset_len(const struct DmpDataset *data);

/**
 * Number of features per row, or 0 for a null handle.
 *
 * # Safety
 * `data` must be null or a live dataset handle.
 */
size_t dmp_dataset_n_features(const struct DmpDataset *data);

/**
 * # Safety
 * `data` must be null or a handle not yet freed.
 */
void dmp_dataset_free(struct DmpDataset *data);

/**
 * Fresh model with ReLU hidden layers of the given widths.
 *
 * # Safety
 * `hidden` must point to `n_hidden` values (or be null when `n_hidden` is
 * 0); `out` must be writable.
 */
enum DmpStatus dmp_model_new(size_t input_dim,
                             const size_t *hidden,
                             size_t n_hidden,
                             size_t n_classes,
                             uint64_t seed,
                             struct DmpModel **out);

/**
 * Trains a copy of `model` with cross-entropy (Adam, batch 64) and returns
 * it as a new handle.
 *
 * # Safety
 * `model` and `data` must be live handles; `out` must be writable.
 */
enum DmpStatus dmp_model_train(const struct DmpModel *model,
                               const struct DmpDataset *data,
                               size_t epochs,
                               double learning_rate,
                               uint64_t seed,
                               struct DmpModel **out);

/**
 * Runs selection and distillation on a trained teacher with default
 * settings apart from the reference size and teacher temperature. The
 * pool's labels are ignored.
 *
 * # Safety
 * All handles must be live; `out` must be writable.
 */
enum DmpStatus dmp_distill(const struct DmpModel *teacher,
                           const struct DmpDataset *d_tr,
                           const struct DmpDataset *pool,
                           const struct DmpDataset *d_test,
                           size_t ref_size,
                           double teacher_temperature,
                           struct DmpModel **out);

/**
 * # Safety
 * `path` must be a nul-terminated string; `out` must be writable.
 */
enum DmpStatus dmp_model_load(const char *path, struct DmpModel **out);

/**
 * # Safety
 * `model` must be a live handle; `path` a nul-terminated string.
 */
enum DmpStatus dmp_model_save(const struct DmpModel *model, const char *path);

/**
 * Number of classes, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t dmp_model_n_classes(const struct DmpModel *model);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void dmp_model_free(struct DmpModel *model);

/**
 * Writes `softmax(logits / temperature)` of one row into `probs`, which
 * must hold `n_probs >= n_classes` values.
 *
 * # Safety
 * `x` must point to `n_features` values and `probs` to `n_probs`.
 */
enum DmpStatus dmp_model_predict(const struct DmpModel *model,
                                 const double *x,
                                 size_t n_features,
                                 double temperature,
                                 double *probs,
                                 size_t n_probs);

/**
 * Prediction entropy (nats) of one row at `temperature`.
 *
 * # Safety
 * `x` must point to `n_features` values; `out` must be writable.
 */
enum DmpStatus dmp_model_entropy(const struct DmpModel *model,
                                 const double *x,
                                 size_t n_features,
                                 double temperature,
                                 double *out);

/**
 * Argmax accuracy on a dataset.
 *
 * # Safety
 * Handles must be live; `accuracy` must be writable.
 */
enum DmpStatus dmp_model_accuracy(const struct DmpModel *model,
                                  const struct DmpDataset *data,
                                  double *accuracy);

/**
 * Loss-threshold attack; writes the tuned and the 0-1 accuracy.
 *
 * # Safety
 * Handles must be live; both outputs must be writable.
 */
enum DmpStatus dmp_bl_attack(const struct DmpModel *model,
                             const struct DmpDataset *members,
                             const struct DmpDataset *nonmembers,
                             double *tuned_accuracy,
                             double *zero_one_accuracy);

/**
 * Trains an unprotected model with the default teacher recipe and
 * returns it with its train accuracy.
 *
 * # Safety
 * `data` must be live; `hidden` must point to `n_hidden` values; outputs
 * must be writable.
 */
enum DmpStatus dmp_train_unprotected(const struct DmpDataset *data,
                                     const size_t *hidden,
                                     size_t n_hidden,
                                     size_t epochs,
                                     uint64_t seed,
                                     struct DmpModel **out,
                                     double *train_accuracy);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DMP_FFI_H */
