//! C ABI over the posegeom toolkit.
//!
//! Conventions:
//! - every fallible call returns a [`PgStatus`]; on failure a message is
//!   available from [`pg_last_error_message`] on the same thread;
//! - point arrays are `n × 3` row-major `double` buffers;
//! - rotations are 3×3 row-major `double[9]`;
//! - scenes are opaque [`PgScene`] handles released with [`pg_scene_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use posegeom::alignment::{
    fit_sa3_nocs_traced, relative_pose_two_step, umeyama_se3, umeyama_sim3, WeightedCorrespondences,
};
use posegeom::harness::scene_io::{read_scene, write_scene};
use posegeom::harness::HarnessError;
use posegeom::metrics::{box_iou3d, OrientedBox3};
use posegeom::synth::{make_scene, ObjectKind, SceneSpec, SyntheticScene};
use posegeom::transforms::{
    geodesic_angle_deg, AnisoSimilarity, Mat3, RigidTransform, Rotation3, Similarity, Vec3,
};
use posegeom::GeomError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InsufficientPoints = 3,
    DegenerateGeometry = 4,
    NoConvergence = 5,
    Io = 6,
    Internal = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgObjectKind {
    Box = 0,
    Cylinder = 1,
    Sphere = 2,
    Composite = 3,
}

/// `x ↦ r·x + t`
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PgRigid {
    pub r: [f64; 9],
    pub t: [f64; 3],
}

/// `x ↦ s·r·x + t`
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PgSimilarity {
    pub s: f64,
    pub r: [f64; 9],
    pub t: [f64; 3],
}

/// `c ↦ r·diag(scale)·c + t`
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PgAnisoSimilarity {
    pub r: [f64; 9],
    pub scale: [f64; 3],
    pub t: [f64; 3],
}

/// Box with orientation `r`, center and full side lengths.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PgBox {
    pub r: [f64; 9],
    pub center: [f64; 3],
    pub extents: [f64; 3],
}

/// Opaque synthetic scene.
pub struct PgScene(SyntheticScene);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(PgStatus, String);

impl From<GeomError> for Failure {
    fn from(e: GeomError) -> Self {
        let status = match &e {
            GeomError::InsufficientPoints { .. } | GeomError::EmptySet | GeomError::EmptyInput => {
                PgStatus::InsufficientPoints
            }
            GeomError::DegenerateGeometry(_) | GeomError::DegenerateInput(_) => PgStatus::DegenerateGeometry,
            GeomError::NoConvergence { .. } => PgStatus::NoConvergence,
            _ => PgStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Geom(g) => g.into(),
            HarnessError::Io { .. } | HarnessError::Stream(_) => Failure(PgStatus::Io, e.to_string()),
            other => Failure(PgStatus::InvalidArgument, other.to_string()),
        }
    }
}

fn null_pointer(what: &str) -> Failure {
    Failure(PgStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status plus last-error
/// message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PgStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PgStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PgStatus::Internal
        }
    }
}

unsafe fn points(ptr: *const f64, n: usize, what: &str) -> Result<Vec<Vec3>, Failure> {
    if ptr.is_null() {
        return Err(null_pointer(what));
    }
    // SAFETY: caller promises `n * 3` readable doubles.
    let flat = std::slice::from_raw_parts(ptr, n * 3);
    Ok(flat.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect())
}

unsafe fn correspondences(
    src: *const f64,
    dst: *const f64,
    weights: *const f64,
    n: usize,
) -> Result<WeightedCorrespondences, Failure> {
    let src = points(src, n, "src")?;
    let dst = points(dst, n, "dst")?;
    let w = if weights.is_null() {
        vec![1.0; n]
    } else {
        // SAFETY: caller promises `n` readable doubles.
        std::slice::from_raw_parts(weights, n).to_vec()
    };
    Ok(WeightedCorrespondences::new(src, dst, w)?)
}

fn mat_to_array(m: &Mat3) -> [f64; 9] {
    std::array::from_fn(|k| m[(k / 3, k % 3)])
}

unsafe fn rotation(ptr: *const f64, what: &str) -> Result<Rotation3, Failure> {
    if ptr.is_null() {
        return Err(null_pointer(what));
    }
    // SAFETY: caller promises 9 readable doubles.
    let r = std::slice::from_raw_parts(ptr, 9);
    Ok(Rotation3::new(Mat3::from_row_slice(r))?)
}

fn rigid_out(t: &RigidTransform) -> PgRigid {
    PgRigid {
        r: mat_to_array(t.r.matrix()),
        t: t.t.into(),
    }
}

fn aniso_out(p: &AnisoSimilarity) -> PgAnisoSimilarity {
    PgAnisoSimilarity {
        r: mat_to_array(p.r.matrix()),
        scale: p.scale.into(),
        t: p.t.into(),
    }
}

fn similarity_out(s: &Similarity) -> PgSimilarity {
    PgSimilarity {
        s: s.s,
        r: mat_to_array(s.r.matrix()),
        t: s.t.into(),
    }
}

unsafe fn write<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null_pointer(what));
    }
    // SAFETY: non-null, caller promises a writable `T`.
    out.write(value);
    Ok(())
}

unsafe fn write_opt<T>(out: *mut T, value: T) {
    if !out.is_null() {
        // SAFETY: non-null, caller promises a writable `T`.
        out.write(value);
    }
}

/// Weighted similarity alignment `dst ≈ s·R·src + t`.
///
/// # Safety
/// `src` and `dst` must point to `n × 3` doubles; `weights` is null (uniform)
/// or points to `n` doubles; `out` must be writable; `rmse` may be null.
#[no_mangle]
pub unsafe extern "C" fn pg_umeyama_sim3(
    src: *const f64,
    dst: *const f64,
    weights: *const f64,
    n: usize,
    out: *mut PgSimilarity,
    rmse: *mut f64,
) -> PgStatus {
    guard(|| {
        let c = correspondences(src, dst, weights, n)?;
        let fit = umeyama_sim3(&c)?;
        write(out, similarity_out(&fit.transform), "out")?;
        write_opt(rmse, fit.rmse);
        Ok(())
    })
}

/// Weighted rigid alignment `dst ≈ R·src + t`.
///
/// # Safety
/// As [`pg_umeyama_sim3`].
#[no_mangle]
pub unsafe extern "C" fn pg_umeyama_se3(
    src: *const f64,
    dst: *const f64,
    weights: *const f64,
    n: usize,
    out: *mut PgRigid,
    rmse: *mut f64,
) -> PgStatus {
    guard(|| {
        let c = correspondences(src, dst, weights, n)?;
        let fit = umeyama_se3(&c)?;
        write(out, rigid_out(&fit.transform), "out")?;
        write_opt(rmse, fit.rmse);
        Ok(())
    })
}

/// Anisotropic similarity from canonical (NOCS) points `src` to camera
/// points `dst`.
///
/// # Safety
/// As [`pg_umeyama_sim3`]; `iterations` may be null.
#[no_mangle]
pub unsafe extern "C" fn pg_fit_sa3_nocs(
    src: *const f64,
    dst: *const f64,
    weights: *const f64,
    n: usize,
    out: *mut PgAnisoSimilarity,
    iterations: *mut usize,
) -> PgStatus {
    guard(|| {
        let c = correspondences(src, dst, weights, n)?;
        let fit = fit_sa3_nocs_traced(&c)?;
        write(out, aniso_out(&fit.alignment.transform), "out")?;
        write_opt(iterations, fit.iterations);
        Ok(())
    })
}

/// Rotation distance in degrees between two row-major rotation matrices.
///
/// # Safety
/// `a` and `b` must point to 9 doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pg_geodesic_angle_deg(a: *const f64, b: *const f64, out: *mut f64) -> PgStatus {
    guard(|| {
        let (a, b) = (rotation(a, "a")?, rotation(b, "b")?);
        write(out, geodesic_angle_deg(&a, &b), "out")
    })
}

unsafe fn oriented_box(b: *const PgBox, what: &str) -> Result<OrientedBox3, Failure> {
    if b.is_null() {
        return Err(null_pointer(what));
    }
    // SAFETY: non-null, caller promises a readable `PgBox`.
    let b = &*b;
    let r = rotation(b.r.as_ptr(), what)?;
    Ok(OrientedBox3::new(
        RigidTransform::new(r, Vec3::from(b.center)),
        Vec3::from(b.extents),
    )?)
}

/// Intersection over union of two oriented boxes.
///
/// # Safety
/// `a`, `b` must point to valid boxes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pg_box_iou3d(a: *const PgBox, b: *const PgBox, out: *mut f64) -> PgStatus {
    guard(|| {
        let (a, b) = (oriented_box(a, "a")?, oriented_box(b, "b")?);
        write(out, box_iou3d(&a, &b), "out")
    })
}

/// Generates a scene with default imaging settings.
///
/// # Safety
/// `out` must be writable; the returned handle is owned by the caller.
#[no_mangle]
pub unsafe extern "C" fn pg_scene_generate(
    kind: PgObjectKind,
    frames: usize,
    seed: u64,
    out: *mut *mut PgScene,
) -> PgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_pointer("out"));
        }
        let mut spec = SceneSpec {
            frames,
            ..Default::default()
        };
        spec.object.kind = match kind {
            PgObjectKind::Box => ObjectKind::Box,
            PgObjectKind::Cylinder => ObjectKind::Cylinder,
            PgObjectKind::Sphere => ObjectKind::Sphere,
            PgObjectKind::Composite => ObjectKind::Composite,
        };
        let scene = make_scene(&spec, seed)?;
        out.write(Box::into_raw(Box::new(PgScene(scene))));
        Ok(())
    })
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a Path, Failure> {
    if path.is_null() {
        return Err(null_pointer("path"));
    }
    // SAFETY: caller promises a NUL-terminated string.
    let s = CStr::from_ptr(path)
        .to_str()
        .map_err(|_| Failure(PgStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(Path::new(s))
}

/// Loads a scene directory written by `posegeom synth` or
/// [`pg_scene_save`].
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pg_scene_load(path: *const c_char, out: *mut *mut PgScene) -> PgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_pointer("out"));
        }
        let scene = read_scene(path_arg(path)?)?;
        out.write(Box::into_raw(Box::new(PgScene(scene))));
        Ok(())
    })
}

/// # Safety
/// `scene` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pg_scene_save(scene: *const PgScene, path: *const c_char) -> PgStatus {
    guard(|| {
        let scene = scene.as_ref().ok_or_else(|| null_pointer("scene"))?;
        write_scene(&scene.0, path_arg(path)?)?;
        Ok(())
    })
}

/// Releases a scene; null is ignored.
///
/// # Safety
/// `scene` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pg_scene_free(scene: *mut PgScene) {
    if !scene.is_null() {
        // SAFETY: handle came from Box::into_raw and is freed once.
        drop(Box::from_raw(scene));
    }
}

/// Number of frames, 0 for a null handle.
///
/// # Safety
/// `scene` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pg_scene_num_frames(scene: *const PgScene) -> usize {
    scene.as_ref().map_or(0, |s| s.0.num_frames())
}

/// Ground-truth SA(3) pose of `frame`.
///
/// # Safety
/// `scene` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pg_scene_gt_pose(scene: *const PgScene, frame: usize, out: *mut PgAnisoSimilarity) -> PgStatus {
    guard(|| {
        let scene = scene.as_ref().ok_or_else(|| null_pointer("scene"))?;
        let f = scene.0.frames.get(frame).ok_or_else(|| {
            Failure(PgStatus::InvalidArgument, format!("frame {frame} out of range"))
        })?;
        write(out, aniso_out(&f.gt_pose), "out")
    })
}

/// Two-step relative pose anchor → `frame` from the scene's point maps and
/// depth. `gt` (nullable) receives the ground truth.
///
/// # Safety
/// `scene` must be a live handle; `out` must be writable; `gt` may be null.
#[no_mangle]
pub unsafe extern "C" fn pg_scene_relative_pose(
    scene: *const PgScene,
    frame: usize,
    out: *mut PgRigid,
    gt: *mut PgRigid,
) -> PgStatus {
    guard(|| {
        let s = &scene.as_ref().ok_or_else(|| null_pointer("scene"))?.0;
        if frame == 0 || frame >= s.num_frames() {
            return Err(Failure(
                PgStatus::InvalidArgument,
                format!("query frame must lie in 1..{}", s.num_frames()),
            ));
        }
        let rel = relative_pose_two_step(
            &s.frames[0].point_map,
            &s.camera_points(0)?,
            &s.frames[frame].point_map,
            &s.camera_points(frame)?,
        )?;
        write(out, rigid_out(&rel.transform), "out")?;
        write_opt(gt, rigid_out(&s.gt_relative[frame - 1]));
        Ok(())
    })
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn pg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
