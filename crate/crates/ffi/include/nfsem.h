#ifndef NFSEM_H
#define NFSEM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call. Zero is success.
 */
typedef enum NfsemStatus {
  NFSEM_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  NFSEM_STATUS_NULL_ARGUMENT = 1,
  /**
   * An argument or input file failed validation.
   */
  NFSEM_STATUS_INVALID_ARGUMENT = 2,
  NFSEM_STATUS_IO = 3,
  /**
   * A file exists but could not be parsed.
   */
  NFSEM_STATUS_FORMAT = 4,
  /**
   * Training diverged or was misconfigured.
   */
  NFSEM_STATUS_TRAIN = 5,
  /**
   * The output buffer is too small; nothing was written.
   */
  NFSEM_STATUS_BUFFER_TOO_SMALL = 6,
  /**
   * A Rust panic was caught at the boundary.
   */
  NFSEM_STATUS_INTERNAL = 7,
} NfsemStatus;

/**
 * A loaded or simulated dataset.
 */
typedef struct NfsemDataset NfsemDataset;

typedef struct NfsemMesh NfsemMesh;

/**
 * A trained field with its forward model, if any.
 */
typedef struct NfsemModel NfsemModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *nfsem_version(void);

/**
 * Message of the last failed call on this thread. Follows the buffer
 * convention of the other string getters; an empty string after success.
 */
enum NfsemStatus nfsem_last_error_message(char *buf, size_t len, size_t *needed);

/**
 * Render a synthetic scene. `config_toml` may be null; otherwise it holds
 * simulator settings in TOML.
 */
enum NfsemStatus nfsem_dataset_simulate(const char *scene,
                                        uint32_t views,
                                        uint64_t seed,
                                        const char *config_toml,
                                        struct NfsemDataset **out);

/**
 * Load a dataset directory holding `manifest.json`.
 */
enum NfsemStatus nfsem_dataset_load(const char *dir, struct NfsemDataset **out);

enum NfsemStatus nfsem_dataset_save(const struct NfsemDataset *ds, const char *dir);

enum NfsemStatus nfsem_dataset_view_count(const struct NfsemDataset *ds, uint32_t *out);

void nfsem_dataset_free(struct NfsemDataset *ds);

/**
 * Train on `ds`. `config_toml` uses the run-config format of the `nfsem`
 * tool and may be null for the defaults.
 */
enum NfsemStatus nfsem_train(const struct NfsemDataset *ds,
                             const char *config_toml,
                             struct NfsemModel **out);

/**
 * Load a field checkpoint file (`field.ckpt`). The model has no forward
 * model attached.
 */
enum NfsemStatus nfsem_model_load(const char *path, struct NfsemModel **out);

enum NfsemStatus nfsem_model_save(const struct NfsemModel *model, const char *path);

/**
 * Signed distance at `n` points (`xyz` holds 3n doubles, scene units)
 * into `out` (n doubles).
 */
enum NfsemStatus nfsem_model_sdf(const struct NfsemModel *model,
                                 const double *xyz,
                                 size_t n,
                                 double *out);

/**
 * Learned forward model as JSON. `NfsemStatus::InvalidArgument` when the
 * model was loaded from a bare field checkpoint.
 */
enum NfsemStatus nfsem_model_phi_json(const struct NfsemModel *model,
                                      char *buf,
                                      size_t len,
                                      size_t *needed);

void nfsem_model_free(struct NfsemModel *model);

/**
 * Marching cubes of the zero level set on a `resolution`³ grid.
 */
enum NfsemStatus nfsem_mesh_extract(const struct NfsemModel *model,
                                    uint32_t resolution,
                                    struct NfsemMesh **out);

enum NfsemStatus nfsem_mesh_counts(const struct NfsemMesh *mesh,
                                   size_t *vertices,
                                   size_t *triangles);

/**
 * Copy vertex positions (3 doubles each) and triangle indices (3 uint32
 * each). `vertex_len` and `index_len` count elements, not bytes.
 */
enum NfsemStatus nfsem_mesh_copy(const struct NfsemMesh *mesh,
                                 double *vertices,
                                 size_t vertex_len,
                                 uint32_t *indices,
                                 size_t index_len);

enum NfsemStatus nfsem_mesh_write_obj(const struct NfsemMesh *mesh, const char *path);

void nfsem_mesh_free(struct NfsemMesh *mesh);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NFSEM_H */
