#ifndef POSEGEOM_H
#define POSEGEOM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PgStatus {
  PG_STATUS_OK = 0,
  PG_STATUS_NULL_POINTER = 1,
  PG_STATUS_INVALID_ARGUMENT = 2,
  PG_STATUS_INSUFFICIENT_POINTS = 3,
  PG_STATUS_DEGENERATE_GEOMETRY = 4,
  PG_STATUS_NO_CONVERGENCE = 5,
  PG_STATUS_IO = 6,
  PG_STATUS_INTERNAL = 7,
} PgStatus;

typedef enum PgObjectKind {
  PG_OBJECT_KIND_BOX = 0,
  PG_OBJECT_KIND_CYLINDER = 1,
  PG_OBJECT_KIND_SPHERE = 2,
  PG_OBJECT_KIND_COMPOSITE = 3,
} PgObjectKind;

/*
 Opaque synthetic scene.
 */
typedef struct PgScene PgScene;

/*
 `x ↦ s·r·x + t`
 */
typedef struct PgSimilarity {
  double s;
  double r[9];
  double t[3];
} PgSimilarity;

/*
 `x ↦ r·x + t`
 */
typedef struct PgRigid {
  double r[9];
  double t[3];
} PgRigid;

/*
 `c ↦ r·diag(scale)·c + t`
 */
typedef struct PgAnisoSimilarity {
  double r[9];
  double scale[3];
  double t[3];
} PgAnisoSimilarity;

/*
 Box with orientation `r`, center and full side lengths.
 */
typedef struct PgBox {
  double r[9];
  double center[3];
  double extents[3];
} PgBox;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Weighted similarity alignment `dst ≈ s·R·src + t`.

 # Safety
 `src` and `dst` must point to `n × 3` doubles; `weights` is null (uniform)
 or points to `n` doubles; `out` must be writable; `rmse` may be null.
 */
enum PgStatus pg_umeyama_sim3(const double *src,
                              const double *dst,
                              const double *weights,
                              size_t n,
                              struct PgSimilarity *out,
                              double *rmse);

/*
 Weighted rigid alignment `dst ≈ R·src + t`.

 # Safety
 As [`pg_umeyama_sim3`].
 */
enum PgStatus pg_umeyama_se3(const double *src,
                             const double *dst,
                             const double *weights,
                             size_t n,
                             struct PgRigid *out,
                             double *rmse);

/*
 Anisotropic similarity from canonical (NOCS) points `src` to camera
 points `dst`.

 # Safety
 As [`pg_umeyama_sim3`]; `iterations` may be null.
 */
enum PgStatus pg_fit_sa3_nocs(const double *src,
                              const double *dst,
                              const double *weights,
                              size_t n,
                              struct PgAnisoSimilarity *out,
                              size_t *iterations);

/*
 Rotation distance in degrees between two row-major rotation matrices.

 # Safety
 `a` and `b` must point to 9 doubles; `out` must be writable.
 */
enum PgStatus pg_geodesic_angle_deg(const double *a, const double *b, double *out);

/*
 Intersection over union of two oriented boxes.

 # Safety
 `a`, `b` must point to valid boxes; `out` must be writable.
 */
enum PgStatus pg_box_iou3d(const struct PgBox *a, const struct PgBox *b, double *out);

/*
 Generates a scene with default imaging settings.

 # Safety
 `out` must be writable; the returned handle is owned by the caller.
 */
enum PgStatus pg_scene_generate(enum PgObjectKind kind,
                                size_t frames,
                                uint64_t seed,
                                struct PgScene **out);

/*
 Loads a scene directory written by `posegeom synth` or
 [`pg_scene_save`].

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum PgStatus pg_scene_load(const char *path, struct PgScene **out);

/*
 # Safety
 `scene` must be a live handle; `path` a NUL-terminated string.
 */
enum PgStatus pg_scene_save(const struct PgScene *scene, const char *path);

/*
 Releases a scene; null is ignored.

 # Safety
 `scene` must be null or a handle not yet freed.
 */
void pg_scene_free(struct PgScene *scene);

/*
 Number of frames, 0 for a null handle.

 # Safety
 `scene` must be null or a live handle.
 */
size_t pg_scene_num_frames(const struct PgScene *scene);

/*
 Ground-truth SA(3) pose of `frame`.

 # Safety
 `scene` must be a live handle; `out` must be writable.
 */
enum PgStatus pg_scene_gt_pose(const struct PgScene *scene,
                               size_t frame,
                               struct PgAnisoSimilarity *out);

/*
 Two-step relative pose anchor → `frame` from the scene's point maps and
 depth. `gt` (nullable) receives the ground truth.

 # Safety
 `scene` must be a live handle; `out` must be writable; `gt` may be null.
 */
enum PgStatus pg_scene_relative_pose(const struct PgScene *scene,
                                     size_t frame,
                                     struct PgRigid *out,
                                     struct PgRigid *gt);

/*
 Message of the last failed call on this thread, or null. Valid until the
 next call into this library from the same thread.
 */
const char *pg_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *pg_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POSEGEOM_H */
