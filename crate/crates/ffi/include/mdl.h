#ifndef MDL_H
#define MDL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Label written by [`mdl_model_classify`] for points outside every class band.
#define MDL_OUT_OF_DOMAIN -1

// Dataset family selector for [`mdl_dataset_generate`].
typedef enum MdlDatasetKind {
  MDL_DATASET_KIND_SEPARATED_SPHERES = 0,
  MDL_DATASET_KIND_CONCENTRIC_SPHERES = 1,
  MDL_DATASET_KIND_SWISS_ROLLS = 2,
} MdlDatasetKind;

// Model family reported by [`mdl_model_kind`].
typedef enum MdlModelKind {
  MDL_MODEL_KIND_DISTANCE_LEARNER = 0,
  MDL_MODEL_KIND_STANDARD = 1,
  MDL_MODEL_KIND_ROBUST = 2,
} MdlModelKind;

// Status codes returned by every fallible function.
typedef enum MdlStatus {
  MDL_STATUS_OK = 0,
  MDL_STATUS_NULL_POINTER = 1,
  MDL_STATUS_INVALID_ARGUMENT = 2,
  MDL_STATUS_IO = 3,
  MDL_STATUS_NUMERIC = 4,
  MDL_STATUS_PANIC = 5,
} MdlStatus;

// Opaque labelled dataset.
typedef struct MdlDataset MdlDataset;

// Opaque trained model, always in inference mode.
typedef struct MdlModel MdlModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message on this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length excluding the NUL.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t mdl_last_error(char *buf, size_t len);

// Samples `count_per_class` points from each of the two class manifolds.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum MdlStatus mdl_dataset_generate(enum MdlDatasetKind kind,
                                    size_t m,
                                    size_t n,
                                    size_t count_per_class,
                                    uint64_t seed,
                                    struct MdlDataset **out);

// Loads a dataset or training-set container written by the pipeline.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum MdlStatus mdl_dataset_load(const char *path, struct MdlDataset **out);

// Releases a dataset handle. Null is ignored.
//
// # Safety
// `ds` must come from this library and not be used afterwards.
void mdl_dataset_free(struct MdlDataset *ds);

// Number of points, or 0 for a null handle.
//
// # Safety
// `ds` must be null or a live handle.
size_t mdl_dataset_len(const struct MdlDataset *ds);

// Ambient dimension, or 0 for a null handle.
//
// # Safety
// `ds` must be null or a live handle.
size_t mdl_dataset_dim(const struct MdlDataset *ds);

// Copies points (`len × dim`, row-major) and labels into caller buffers.
// Either buffer may be null to skip it.
//
// # Safety
// Non-null buffers must hold `len·dim` doubles and `len` ints respectively.
enum MdlStatus mdl_dataset_copy(const struct MdlDataset *ds, double *points, int32_t *labels);

// Loads a model checkpoint.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum MdlStatus mdl_model_load(const char *path, struct MdlModel **out);

// Releases a model handle. Null is ignored.
//
// # Safety
// `model` must come from this library and not be used afterwards.
void mdl_model_free(struct MdlModel *model);

// Input dimension, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t mdl_model_input_dim(const struct MdlModel *model);

// Number of classes (output columns), or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t mdl_model_num_classes(const struct MdlModel *model);

// Writes the model family into `out`.
//
// # Safety
// `model` must be a live handle and `out` writable.
enum MdlStatus mdl_model_kind(const struct MdlModel *model, enum MdlModelKind *out);

// Evaluates `rows` points. Distance learners write predicted distances,
// classifiers write class probabilities; `out` is `rows × num_classes`.
//
// # Safety
// `x` must hold `rows·input_dim` doubles and `out` `rows·num_classes`.
enum MdlStatus mdl_model_predict(const struct MdlModel *model,
                                 const double *x,
                                 size_t rows,
                                 double *out);

// Assigns a label to each of `rows` points. For distance learners the
// nearest class wins when its distance is at most `tol`, otherwise the
// point gets [`MDL_OUT_OF_DOMAIN`]; pass a negative or NaN `tol` to
// disable abstention. Classifiers use the most probable class.
//
// # Safety
// `x` must hold `rows·input_dim` doubles and `labels` `rows` ints.
enum MdlStatus mdl_model_classify(const struct MdlModel *model,
                                  const double *x,
                                  size_t rows,
                                  double tol,
                                  int32_t *labels);

// Projected gradient attack inside the L2 ball of radius `epsilon` around
// each point. `step_size` is the per-step move length; a `seed` of 0 starts
// at the clean point, any other value starts at a random point in the ball.
// Adversarial points are written to `out` (`rows × input_dim`).
//
// # Safety
// `x` and `out` must hold `rows·input_dim` doubles, `labels` `rows` ints.
enum MdlStatus mdl_pgd_attack(const struct MdlModel *model,
                              const double *x,
                              const int32_t *labels,
                              size_t rows,
                              double epsilon,
                              size_t steps,
                              double step_size,
                              uint64_t seed,
                              double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MDL_H */
