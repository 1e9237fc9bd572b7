#ifndef ROBUST_CORESET_H
#define ROBUST_CORESET_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Status codes returned by every fallible function.
typedef enum RcStatus {
  RC_STATUS_OK = 0,
  RC_STATUS_NULL_POINTER = 1,
  // Bad input data or configuration.
  RC_STATUS_INVALID_ARGUMENT = 2,
  // The numerical machinery failed (no convergence, degenerate sample, ...).
  RC_STATUS_NUMERICAL = 3,
  // An output buffer is shorter than required.
  RC_STATUS_BUFFER_TOO_SMALL = 4,
  // A Rust panic was caught at the boundary.
  RC_STATUS_PANIC = 5,
} RcStatus;

// Weighted summary produced by a build or a dynamic query.
typedef struct RcCoreset RcCoreset;

// Weighted point set.
typedef struct RcDataset RcDataset;

// Fully dynamic robust coreset.
typedef struct RcDynamic RcDynamic;

// Loss instantiation bound to a data dimension.
typedef struct RcModel RcModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` (NUL-terminated, truncated to
// `len`) and returns the full message length without the terminator. Pass a null `buf` to
// query the length.
//
// # Safety
// `buf` is null or points to `len` writable bytes.
size_t rc_last_error(char *buf, size_t len);

// Builds a dataset of `n` points in `dim` dimensions from row-major `features`.
// `ids`, `weights` and `labels` may be null, meaning ids `0..n`, unit weights and no labels.
//
// # Safety
// Non-null arrays hold `n` (or `n·dim` for `features`) readable elements; `out` is writable.
enum RcStatus rc_dataset_new(size_t n,
                             size_t dim,
                             const double *features,
                             const uint64_t *ids,
                             const double *weights,
                             const int8_t *labels,
                             struct RcDataset **out);

// Number of points, or 0 for a null handle.
//
// # Safety
// `ds` is null or a live dataset handle.
size_t rc_dataset_len(const struct RcDataset *ds);

// # Safety
// `ds` is null or a dataset handle not yet freed.
void rc_dataset_free(struct RcDataset *ds);

// Parses a model descriptor such as `{"kind":"kmeans","k":3}` for data of dimension `dim`.
//
// # Safety
// `json` is a NUL-terminated string; `out` is writable.
enum RcStatus rc_model_from_json(const char *json, size_t dim, struct RcModel **out);

// Length of the parameter vector θ, or 0 for a null handle.
//
// # Safety
// `model` is null or a live model handle.
size_t rc_model_param_dim(const struct RcModel *model);

// # Safety
// `model` is null or a model handle not yet freed.
void rc_model_free(struct RcModel *model);

// Weighted objective at θ, trimmed by weight `z` (`z = 0` gives the plain objective).
//
// # Safety
// Handles are live; `theta` holds `theta_len` values; `out` is writable.
enum RcStatus rc_objective(const struct RcModel *model,
                           const struct RcDataset *ds,
                           const double *theta,
                           size_t theta_len,
                           double z,
                           double *out);

// Runs the trimmed solver (local-search seeding for clustering models) and writes θ* and its
// trimmed loss.
//
// # Safety
// Handles are live; `theta_out` holds `theta_len` writable values; `loss_out` is null or
// writable.
enum RcStatus rc_solve(const struct RcModel *model,
                       const struct RcDataset *ds,
                       double z,
                       uint64_t seed,
                       double *theta_out,
                       size_t theta_len,
                       double *loss_out);

// Builds a robust coreset. `options` is a JSON object with `z` (required) and optionally
// `beta`, `eps`, `eps0`, `so_size`, `builder`, `size`, `pilot_frac`, `radius`, `drift_factor`.
//
// # Safety
// Handles are live; `options` is NUL-terminated; `out` is writable.
enum RcStatus rc_build_robust(const struct RcModel *model,
                              const struct RcDataset *ds,
                              const char *options,
                              uint64_t seed,
                              struct RcCoreset **out);

// Number of coreset points, or 0 for a null handle.
//
// # Safety
// `c` is null or a live coreset handle.
size_t rc_coreset_len(const struct RcCoreset *c);

// Copies the coreset into caller buffers of `len` points: ids, row-major features
// (`len·dim`) and weights. Any output pointer may be null to skip it.
//
// # Safety
// `c` is live; non-null outputs have room for the stated number of elements.
enum RcStatus rc_coreset_copy(const struct RcCoreset *c,
                              size_t len,
                              size_t dim,
                              uint64_t *ids,
                              double *features,
                              double *weights);

// Converts a coreset into a dataset so it can be solved or evaluated.
//
// # Safety
// `c` is live; `out` is writable.
enum RcStatus rc_coreset_to_dataset(const struct RcCoreset *c, struct RcDataset **out);

// # Safety
// `c` is null or a coreset handle not yet freed.
void rc_coreset_free(struct RcCoreset *c);

// Starts a dynamic robust coreset over `ds`. Takes the same options as [`rc_build_robust`]
// plus `bucket_size` and `capacity`.
//
// # Safety
// Handles are live; `options` is NUL-terminated; `out` is writable.
enum RcStatus rc_dynamic_init(const struct RcModel *model,
                              const struct RcDataset *ds,
                              const char *options,
                              uint64_t seed,
                              struct RcDynamic **out);

// Inserts a point; `label` is ignored unless `has_label` is true.
//
// # Safety
// `dy` is live; `features` holds `dim` values.
enum RcStatus rc_dynamic_insert(struct RcDynamic *dy,
                                uint64_t id,
                                const double *features,
                                size_t dim,
                                double weight,
                                bool has_label,
                                int8_t label);

// # Safety
// `dy` is live.
enum RcStatus rc_dynamic_delete(struct RcDynamic *dy, uint64_t id);

// Changes the outlier count by `dz`.
//
// # Safety
// `dy` is live.
enum RcStatus rc_dynamic_change_z(struct RcDynamic *dy, int64_t dz);

// Current robust coreset of the live point set.
//
// # Safety
// `dy` is live; `out` is writable.
enum RcStatus rc_dynamic_query(const struct RcDynamic *dy, struct RcCoreset **out);

// Number of live points, or 0 for a null handle.
//
// # Safety
// `dy` is null or a live handle.
size_t rc_dynamic_len(const struct RcDynamic *dy);

// # Safety
// `dy` is null or a dynamic handle not yet freed.
void rc_dynamic_free(struct RcDynamic *dy);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ROBUST_CORESET_H */
