#ifndef STSIMPLEX_H
#define STSIMPLEX_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum StsStatus {
  STS_STATUS_OK = 0,
  STS_STATUS_NULL_POINTER = 1,
  STS_STATUS_INVALID_INPUT = 2,
  STS_STATUS_NUMERIC = 3,
  STS_STATUS_IO = 4,
  STS_STATUS_SHAPE = 5,
  STS_STATUS_BUFFER_TOO_SMALL = 6,
  STS_STATUS_INTERNAL = 7,
  STS_STATUS_PANIC = 8,
} StsStatus;

// Simplicial complex handle.
typedef struct StsComplex StsComplex;

// Trained model handle.
typedef struct StsModel StsModel;

// Sparse integer operator handle.
typedef struct StsOperator StsOperator;

// Walk sampling parameters.
typedef struct StsWalkConfig {
  size_t length;
  size_t samples;
  uint8_t variant;
  bool biased;
  uint64_t seed;
} StsWalkConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message (NUL-terminated,
// truncated to `cap`) and returns its full length in bytes.
size_t sts_last_error(char *buf, size_t cap);

// Library version as a static NUL-terminated string.
const char *sts_version(void);

// Builds a complex from `n_edges` vertex pairs (`2 * n_edges` ids).
// With `lift`, every 3-clique becomes a triangle.
enum StsStatus sts_complex_from_edges(const uint64_t *pairs,
                                      size_t n_edges,
                                      bool lift,
                                      struct StsComplex **out);

// Delaunay complex of `n` points given as interleaved `x, y` pairs.
// Vertex ids are the point positions.
enum StsStatus sts_complex_from_points(const double *xy, size_t n, struct StsComplex **out);

enum StsStatus sts_complex_load(const char *path_utf8, struct StsComplex **out);

enum StsStatus sts_complex_save(const struct StsComplex *c, const char *path_utf8);

// Writes the vertex, edge and triangle counts to `counts[0..3]`.
enum StsStatus sts_complex_counts(const struct StsComplex *c, size_t *counts);

void sts_complex_free(struct StsComplex *c);

// Boundary matrix from order `k` to `k - 1` (`k` is 1 or 2).
enum StsStatus sts_operator_boundary(const struct StsComplex *c,
                                     size_t k,
                                     bool signed_,
                                     struct StsOperator **out);

enum StsStatus sts_operator_hodge_laplacian(const struct StsComplex *c,
                                            size_t k,
                                            struct StsOperator **out);

// Cross-order block adjacency; `variant` 1 keeps same-order blocks, 2
// keeps only boundary/coboundary blocks.
enum StsStatus sts_operator_full_adjacency(const struct StsComplex *c,
                                           uint8_t variant,
                                           struct StsOperator **out);

enum StsStatus sts_operator_shape(const struct StsOperator *op,
                                  size_t *rows,
                                  size_t *cols,
                                  size_t *nnz);

// Copies the nonzeros in row-major order into three parallel arrays of
// capacity `cap`.
enum StsStatus sts_operator_triplets(const struct StsOperator *op,
                                     size_t *rows,
                                     size_t *cols,
                                     int64_t *vals,
                                     size_t cap,
                                     size_t *out_len);

void sts_operator_free(struct StsOperator *op);

// Samples `samples` walks from every vertex. Trajectories hold global
// simplex indices (vertices, then edges, then triangles) laid out as
// `[vertex][sample][length + 1]`; `anonymous` has the same layout.
enum StsStatus sts_sample_walks(const struct StsComplex *c,
                                struct StsWalkConfig cfg,
                                uint32_t *trajectories,
                                uint16_t *anonymous,
                                size_t cap,
                                size_t *out_len);

// First-occurrence labels (from 1) of a walk of `len` ids.
enum StsStatus sts_anonymize(const uint32_t *walk, size_t len, uint16_t *labels);

// Loads a model saved by `stsimplex train` (parameters at `path`, config
// in the `.json` sidecar).
enum StsStatus sts_model_load(const char *path_utf8, struct StsModel **out);

// Input walk-tensor shape `[node, time, channel, position, sample]`.
enum StsStatus sts_model_input_shape(const struct StsModel *m, size_t *shape);

// Output shape `[node, step, feature]`.
enum StsStatus sts_model_output_shape(const struct StsModel *m, size_t *shape);

// Runs the model on a prepared walk tensor (row-major, shape from
// [`sts_model_input_shape`]).
enum StsStatus sts_model_predict(const struct StsModel *m,
                                 const float *input,
                                 size_t input_len,
                                 float *output,
                                 size_t cap,
                                 size_t *out_len);

void sts_model_free(struct StsModel *m);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STSIMPLEX_H */
