//! Pinhole camera model, field-of-view intrinsics encoding, depth/point
//! lifting and the camera-parameter supervision loss.
//!
//! Pixel `(u, v)` refers to column `u`, row `v`, and integer coordinates are
//! pixel centers, so the principal ray through `(cx, cy)` backprojects to
//! `(0, 0, z)`.

use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::transforms::{UnitQuaternion, Vec3};

pub const DEFAULT_HUBER_DELTA: f64 = 0.1;
const MIN_DEPTH: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(GeomError::InvalidValue("focal lengths must be positive".into()));
        }
        if width == 0 || height == 0 {
            return Err(GeomError::InvalidValue("image must be at least 1×1".into()));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Ray point at depth `z` through pixel `(u, v)`.
    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Vec3 {
        Vec3::new((u - self.cx) * z / self.fx, (v - self.cy) * z / self.fy, z)
    }

    pub fn project_point(&self, p: &Vec3) -> Result<[f64; 2]> {
        if !(p.z > MIN_DEPTH) {
            return Err(GeomError::BehindCamera(p.z));
        }
        Ok([
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ])
    }
}

/// Camera parameters as regressed by a camera head: extrinsic rotation as a
/// quaternion, translation, and the two fields of view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPoseEncoding {
    pub q: UnitQuaternion,
    pub t: Vec3,
    pub fov_x: f64,
    pub fov_y: f64,
}

impl CameraPoseEncoding {
    pub fn new(q: UnitQuaternion, t: Vec3, fov_x: f64, fov_y: f64) -> Result<Self> {
        let open = |f: f64| f > 0.0 && f < std::f64::consts::PI;
        if !(open(fov_x) && open(fov_y)) {
            return Err(GeomError::InvalidValue("field of view must lie in (0, π)".into()));
        }
        Ok(Self { q, t, fov_x, fov_y })
    }

    /// Flat parameter vector `[qw, qx, qy, qz, tx, ty, tz, fov_x, fov_y]`.
    pub fn to_vec(&self) -> [f64; 9] {
        [
            self.q.w, self.q.x, self.q.y, self.q.z, self.t.x, self.t.y, self.t.z, self.fov_x,
            self.fov_y,
        ]
    }
}

/// Decodes a FoV encoding; the principal point sits at the image center.
pub fn fov_to_intrinsics(enc: &CameraPoseEncoding, width: usize, height: usize) -> Result<Intrinsics> {
    let (w, h) = (width as f64, height as f64);
    Intrinsics::new(
        (w / 2.0) / (enc.fov_x / 2.0).tan(),
        (h / 2.0) / (enc.fov_y / 2.0).tan(),
        w / 2.0,
        h / 2.0,
        width,
        height,
    )
}

/// `(fov_x, fov_y)` in radians.
pub fn intrinsics_to_fov(k: &Intrinsics) -> (f64, f64) {
    (
        2.0 * ((k.width as f64 / 2.0) / k.fx).atan(),
        2.0 * ((k.height as f64 / 2.0) / k.fy).atan(),
    )
}

/// Row-major `height × width` depth image; values `<= 0` are invalid.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(GeomError::DimensionMismatch(format!(
                "depth has {} values for {width}×{height}",
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(GeomError::InvalidValue("non-finite depth".into()));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.values[v * self.width + u]
    }

    pub fn is_valid(&self, u: usize, v: usize) -> bool {
        self.get(u, v) > 0.0
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|d| **d > 0.0).count()
    }
}

/// Per-pixel 3D points with non-negative confidences; zero confidence marks
/// an unusable pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMap {
    pub width: usize,
    pub height: usize,
    pub points: Vec<Vec3>,
    pub confidence: Vec<f64>,
}

impl PointMap {
    pub fn new(width: usize, height: usize, points: Vec<Vec3>, confidence: Vec<f64>) -> Result<Self> {
        let n = width * height;
        if points.len() != n || confidence.len() != n {
            return Err(GeomError::DimensionMismatch(format!(
                "point map expects {n} pixels, got {} points / {} confidences",
                points.len(),
                confidence.len()
            )));
        }
        if !confidence.iter().all(|c| c.is_finite() && *c >= 0.0) {
            return Err(GeomError::InvalidValue("confidence must be finite and >= 0".into()));
        }
        if !points.iter().all(|p| p.iter().all(|x| x.is_finite())) {
            return Err(GeomError::InvalidValue("non-finite point".into()));
        }
        Ok(Self {
            width,
            height,
            points,
            confidence,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn same_shape(&self, other: &PointMap) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Multiplies every point by `lambda` (confidence untouched).
    pub fn scaled(&self, lambda: f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            points: self.points.iter().map(|p| p * lambda).collect(),
            confidence: self.confidence.clone(),
        }
    }
}

/// Lifts every valid depth pixel to camera space. Invalid pixels get the
/// origin and zero confidence.
pub fn backproject(d: &DepthMap, k: &Intrinsics) -> Result<PointMap> {
    if d.width != k.width || d.height != k.height {
        return Err(GeomError::DimensionMismatch(format!(
            "depth {}×{} vs intrinsics {}×{}",
            d.width, d.height, k.width, k.height
        )));
    }
    let n = d.width * d.height;
    let mut points = Vec::with_capacity(n);
    let mut confidence = Vec::with_capacity(n);
    for v in 0..d.height {
        for u in 0..d.width {
            let z = d.get(u, v);
            if z > 0.0 {
                points.push(k.unproject(u as f64, v as f64, z));
                confidence.push(1.0);
            } else {
                points.push(Vec3::zeros());
                confidence.push(0.0);
            }
        }
    }
    Ok(PointMap {
        width: d.width,
        height: d.height,
        points,
        confidence,
    })
}

/// Pinhole projection; results may fall outside the image.
pub fn project(pts: &[Vec3], k: &Intrinsics) -> Result<Vec<[f64; 2]>> {
    pts.iter().map(|p| k.project_point(p)).collect()
}

pub fn huber(x: f64, delta: f64) -> f64 {
    let a = x.abs();
    if a <= delta {
        0.5 * x * x
    } else {
        delta * (a - 0.5 * delta)
    }
}

pub fn huber_grad(x: f64, delta: f64) -> f64 {
    if x.abs() <= delta {
        x
    } else {
        delta * x.signum()
    }
}

/// Sum of component-wise Huber penalties over quaternion, translation and
/// FoV. The predicted quaternion is sign-aligned to the target first.
pub fn camera_loss(pred: &CameraPoseEncoding, gt: &CameraPoseEncoding, delta: f64) -> f64 {
    camera_loss_with_grad(pred, gt, delta).0
}

/// Loss value and its gradient w.r.t. `pred.to_vec()`.
pub fn camera_loss_with_grad(
    pred: &CameraPoseEncoding,
    gt: &CameraPoseEncoding,
    delta: f64,
) -> (f64, [f64; 9]) {
    camera_loss_flat(&pred.to_vec(), &gt.to_vec(), delta)
}

pub(crate) fn camera_loss_flat(p: &[f64], g: &[f64], delta: f64) -> (f64, [f64; 9]) {
    let q_dot: f64 = (0..4).map(|i| p[i] * g[i]).sum();
    let sign = if q_dot < 0.0 { -1.0 } else { 1.0 };
    let mut value = 0.0;
    let mut grad = [0.0; 9];
    for i in 0..9 {
        let s = if i < 4 { sign } else { 1.0 };
        let r = s * p[i] - g[i];
        value += huber(r, delta);
        grad[i] = s * huber_grad(r, delta);
    }
    (value, grad)
}
