//! Deterministic synthetic scenes: canonical point objects inside the NOCS
//! cube, sampled SA(3) poses, z-buffered depth, exact NOCS maps and
//! anchor-frame point maps, plus controlled corruption of the predicted
//! maps.
//!
//! Frame 0 is the anchor; its camera frame is the world frame of the scene.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::MIN_VALID_PIXELS;
use crate::camera::{backproject, fov_to_intrinsics, CameraPoseEncoding, DepthMap, Intrinsics, PointMap};
use crate::error::{GeomError, Result};
use crate::random::{gaussian_vec3, rng_for, uniform_in_ball, uniform_rotation, unit_vector, Stream};
use crate::transforms::{AnisoSimilarity, RigidTransform, Rotation3, UnitQuaternion, Vec3};

const NEAR_PLANE: f64 = 0.1;
const SELF_CHECK_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    Box,
    Cylinder,
    Sphere,
    Composite,
}

/// Surface samples of a canonical object inside `[-0.5, 0.5]³`.
///
/// Boxes always start with their 8 corners, so `n = 8` yields exactly the
/// cube corners.
pub fn gen_canonical_object(kind: ObjectKind, n: usize, seed: u64) -> Result<Vec<Vec3>> {
    if n < 8 {
        return Err(GeomError::InvalidValue(format!("need at least 8 object points, got {n}")));
    }
    let mut rng = rng_for(seed, Stream::Object);
    let mut pts = Vec::with_capacity(n);
    match kind {
        ObjectKind::Box => {
            for i in 0..8 {
                pts.push(Vec3::new(
                    if i & 1 == 0 { -0.5 } else { 0.5 },
                    if i & 2 == 0 { -0.5 } else { 0.5 },
                    if i & 4 == 0 { -0.5 } else { 0.5 },
                ));
            }
            while pts.len() < n {
                let axis = rng.random_range(0..3);
                let side = if rng.random_bool(0.5) { 0.5 } else { -0.5 };
                let mut p = Vec3::from_fn(|_, _| rng.random_range(-0.5..=0.5));
                p[axis] = side;
                pts.push(p);
            }
        }
        ObjectKind::Sphere => {
            while pts.len() < n {
                pts.push(unit_vector(&mut rng) * 0.5);
            }
        }
        ObjectKind::Cylinder => {
            while pts.len() < n {
                pts.push(cylinder_point(&mut rng, Vec3::zeros(), 0.5, 1.0));
            }
        }
        ObjectKind::Composite => {
            // mug: cylindrical body plus a ring handle in the x-y plane
            while pts.len() < n {
                if rng.random_bool(0.75) {
                    pts.push(cylinder_point(&mut rng, Vec3::new(-0.1, 0.0, 0.0), 0.3, 0.8));
                } else {
                    let a = rng.random_range(0.0..std::f64::consts::TAU);
                    let b = rng.random_range(0.0..std::f64::consts::TAU);
                    let (major, minor) = (0.15, 0.04);
                    let radial = major + minor * b.cos();
                    pts.push(Vec3::new(0.25 + radial * a.cos(), radial * a.sin(), minor * b.sin()));
                }
            }
        }
    }
    Ok(pts)
}

/// Surface point of a y-axis cylinder, side vs. caps chosen by area.
fn cylinder_point<R: Rng>(rng: &mut R, center: Vec3, radius: f64, height: f64) -> Vec3 {
    let side = 2.0 * radius * height;
    let caps = 2.0 * radius * radius * 0.5;
    let a = rng.random_range(0.0..std::f64::consts::TAU);
    if rng.random_range(0.0..side + caps) < side {
        let y = rng.random_range(-0.5..=0.5) * height;
        center + Vec3::new(radius * a.cos(), y, radius * a.sin())
    } else {
        let r = radius * rng.random_range(0.0f64..=1.0).sqrt();
        let y = if rng.random_bool(0.5) { 0.5 } else { -0.5 } * height;
        center + Vec3::new(r * a.cos(), y, r * a.sin())
    }
}

/// Ranges for object pose sampling in the anchor camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoseSpec {
    /// Object center x and y are drawn from `[-xy_range, xy_range]`, meters.
    pub xy_range: f64,
    /// Object center depth range, meters.
    pub z_range: [f64; 2],
    pub scale_min: [f64; 3],
    pub scale_max: [f64; 3],
}

impl Default for PoseSpec {
    fn default() -> Self {
        Self {
            xy_range: 0.08,
            z_range: [0.7, 1.0],
            scale_min: [0.12, 0.12, 0.12],
            scale_max: [0.3, 0.3, 0.3],
        }
    }
}

impl PoseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.xy_range >= 0.0) {
            return Err(GeomError::InvalidValue("xy_range must be >= 0".into()));
        }
        if !(self.z_range[0] > NEAR_PLANE && self.z_range[1] >= self.z_range[0]) {
            return Err(GeomError::InvalidValue("z_range must lie beyond the 0.1 m near plane".into()));
        }
        for k in 0..3 {
            if !(self.scale_min[k] > 0.0 && self.scale_max[k] >= self.scale_min[k]) {
                return Err(GeomError::InvalidValue("scale range must be positive and ordered".into()));
            }
        }
        Ok(())
    }
}

/// Uniform rotation, box-uniform translation and per-axis scale.
pub fn sample_pose(seed: u64, spec: &PoseSpec) -> Result<AnisoSimilarity> {
    spec.validate()?;
    let mut rng = rng_for(seed, Stream::Pose);
    let r = uniform_rotation(&mut rng);
    let mut uniform = |lo: f64, hi: f64| if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let t = Vec3::new(
        uniform(-spec.xy_range, spec.xy_range),
        uniform(-spec.xy_range, spec.xy_range),
        uniform(spec.z_range[0], spec.z_range[1]),
    );
    let scale = Vec3::from_fn(|k, _| uniform(spec.scale_min[k], spec.scale_max[k]));
    AnisoSimilarity::new(r, scale, t)
}

/// Z-buffered point splat.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub depth: DepthMap,
    /// Winning point per pixel.
    pub index: Vec<Option<usize>>,
}

/// Splats every point with `z > 0` to its nearest pixel; each pixel keeps
/// the smallest depth (lowest index on ties).
pub fn render_depth(pts_cam: &[Vec3], k: &Intrinsics) -> Result<Rendered> {
    let (w, h) = (k.width, k.height);
    let mut depth = vec![f64::INFINITY; w * h];
    let mut index = vec![None; w * h];
    for (i, p) in pts_cam.iter().enumerate() {
        let Ok([u, v]) = k.project_point(p) else {
            continue;
        };
        let (u, v) = (u.round(), v.round());
        if u < 0.0 || v < 0.0 || u >= w as f64 || v >= h as f64 {
            continue;
        }
        let px = v as usize * w + u as usize;
        if p.z < depth[px] {
            depth[px] = p.z;
            index[px] = Some(i);
        }
    }
    if index.iter().all(Option::is_none) {
        return Err(GeomError::NothingVisible);
    }
    let values = depth
        .into_iter()
        .map(|d| if d.is_finite() { d } else { 0.0 })
        .collect();
    Ok(Rendered {
        depth: DepthMap::new(w, h, values)?,
        index,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectSpec {
    pub kind: ObjectKind,
    pub n: usize,
}

impl Default for ObjectSpec {
    fn default() -> Self {
        Self {
            kind: ObjectKind::Box,
            n: 6000,
        }
    }
}

/// How far non-anchor cameras move around the object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ViewSpec {
    /// Maximum rotation about the object center, degrees.
    pub max_angle_deg: f64,
    /// Maximum extra camera offset, meters.
    pub max_offset: f64,
}

impl Default for ViewSpec {
    fn default() -> Self {
        Self {
            max_angle_deg: 35.0,
            max_offset: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub object: ObjectSpec,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    /// Horizontal and vertical field of view, degrees.
    pub fov_deg: f64,
    pub pose: PoseSpec,
    pub views: ViewSpec,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            object: ObjectSpec::default(),
            frames: 2,
            width: 96,
            height: 96,
            fov_deg: 55.0,
            pose: PoseSpec::default(),
            views: ViewSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneFrame {
    /// Canonical → this frame's camera.
    pub gt_pose: AnisoSimilarity,
    pub intrinsics: Intrinsics,
    pub depth: DepthMap,
    /// Canonical coordinates per pixel (zero where depth is invalid).
    pub nocs: Vec<Vec3>,
    /// This frame's observed surface in anchor-camera coordinates.
    pub point_map: PointMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub seed: u64,
    pub object: ObjectSpec,
    pub canonical_pts: Vec<Vec3>,
    pub frames: Vec<SceneFrame>,
    /// Anchor camera → frame `i + 1` camera.
    pub gt_relative: Vec<RigidTransform>,
}

impl SyntheticScene {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    /// Anchor camera → frame `i` camera (identity for the anchor).
    pub fn relative_to_anchor(&self, i: usize) -> RigidTransform {
        if i == 0 {
            RigidTransform::identity()
        } else {
            self.gt_relative[i - 1]
        }
    }

    /// Depth-derived points in frame `i`'s own camera.
    pub fn camera_points(&self, i: usize) -> Result<PointMap> {
        let f = &self.frames[i];
        backproject(&f.depth, &f.intrinsics)
    }

    /// Pixels with valid depth in frame `i`.
    pub fn valid_pixels(&self, i: usize) -> Vec<usize> {
        let d = &self.frames[i].depth;
        (0..d.values.len()).filter(|&p| d.values[p] > 0.0).collect()
    }

    /// Every point map multiplied by `lambda`.
    pub fn with_scaled_point_maps(&self, lambda: f64) -> Self {
        let mut out = self.clone();
        for f in &mut out.frames {
            f.point_map = f.point_map.scaled(lambda);
        }
        out
    }

    /// Camera-head style encoding of frame `i`: the anchor→frame rotation
    /// and translation together with the field of view.
    pub fn camera_encoding(&self, i: usize) -> Result<CameraPoseEncoding> {
        let rel = self.relative_to_anchor(i);
        let (fx, fy) = crate::camera::intrinsics_to_fov(&self.frames[i].intrinsics);
        CameraPoseEncoding::new(UnitQuaternion::from_rotation(&rel.r), rel.t, fx, fy)
    }

    /// Verifies the pixel-wise consistency of depth, NOCS, poses and point
    /// maps, plus the relative poses.
    pub fn self_check(&self) -> Result<()> {
        let fail = |msg: String| Err(GeomError::InvalidValue(format!("scene self-check: {msg}")));
        if self.gt_relative.len() + 1 != self.frames.len() {
            return fail("relative pose count".into());
        }
        if self
            .canonical_pts
            .iter()
            .any(|p| p.iter().any(|c| c.abs() > 0.5 + 1e-12))
        {
            return fail("canonical point outside the NOCS cube".into());
        }
        let anchor_pose = self.frames[0].gt_pose;
        for (i, f) in self.frames.iter().enumerate() {
            let rel = self.relative_to_anchor(i);
            let expect = anchor_pose.premul_rigid(&rel);
            if (expect.r.matrix() - f.gt_pose.r.matrix()).norm() > SELF_CHECK_TOL
                || (expect.t - f.gt_pose.t).norm() > SELF_CHECK_TOL
            {
                return fail(format!("frame {i} pose inconsistent with relative pose"));
            }
            let cam = self.camera_points(i)?;
            let to_anchor = rel.inverse();
            for p in 0..cam.len() {
                if cam.confidence[p] == 0.0 {
                    continue;
                }
                if (f.gt_pose.apply(&f.nocs[p]) - cam.points[p]).norm() > SELF_CHECK_TOL {
                    return fail(format!("frame {i} pixel {p}: NOCS/depth mismatch"));
                }
                if (to_anchor.apply(&cam.points[p]) - f.point_map.points[p]).norm() > SELF_CHECK_TOL {
                    return fail(format!("frame {i} pixel {p}: point map mismatch"));
                }
            }
        }
        Ok(())
    }
}

/// Builds a consistent multi-frame scene. Non-anchor cameras orbit the
/// object center by a random rotation of at most `views.max_angle_deg`.
pub fn make_scene(spec: &SceneSpec, seed: u64) -> Result<SyntheticScene> {
    if spec.frames == 0 {
        return Err(GeomError::InvalidValue("scene needs at least one frame".into()));
    }
    if !(spec.fov_deg > 0.0 && spec.fov_deg < 180.0) {
        return Err(GeomError::InvalidValue("fov_deg must lie in (0, 180)".into()));
    }
    let canonical_pts = gen_canonical_object(spec.object.kind, spec.object.n, seed)?;
    let anchor_pose = sample_pose(seed, &spec.pose)?;
    let fov = spec.fov_deg.to_radians();
    let enc = CameraPoseEncoding::new(UnitQuaternion::identity(), Vec3::zeros(), fov, fov)?;
    let k = fov_to_intrinsics(&enc, spec.width, spec.height)?;

    let mut view_rng = rng_for(seed, Stream::Views);
    let center = anchor_pose.t;
    let mut relatives = vec![RigidTransform::identity()];
    for _ in 1..spec.frames {
        let axis = unit_vector(&mut view_rng);
        let max_angle = spec.views.max_angle_deg.to_radians();
        let angle = if max_angle > 0.0 {
            view_rng.random_range(0.0..=max_angle)
        } else {
            0.0
        };
        let offset = if spec.views.max_offset > 0.0 {
            uniform_in_ball(&mut view_rng, spec.views.max_offset)
        } else {
            Vec3::zeros()
        };
        let r = Rotation3::from_axis_angle(&axis, angle);
        let t = center - r.rotate(&center) + offset;
        relatives.push(RigidTransform::new(r, t));
    }

    let mut frames = Vec::with_capacity(spec.frames);
    for rel in &relatives {
        let gt_pose = anchor_pose.premul_rigid(rel);
        let pts_cam: Vec<Vec3> = canonical_pts.iter().map(|c| gt_pose.apply(c)).collect();
        let rendered = render_depth(&pts_cam, &k)?;
        let cam = backproject(&rendered.depth, &k)?;
        let to_anchor = rel.inverse();
        let mut nocs = vec![Vec3::zeros(); cam.len()];
        let mut anchor_pts = vec![Vec3::zeros(); cam.len()];
        for p in 0..cam.len() {
            if cam.confidence[p] > 0.0 {
                nocs[p] = gt_pose.inverse_apply(&cam.points[p]);
                anchor_pts[p] = to_anchor.apply(&cam.points[p]);
            }
        }
        let point_map = PointMap::new(k.width, k.height, anchor_pts, cam.confidence.clone())?;
        frames.push(SceneFrame {
            gt_pose,
            intrinsics: k,
            depth: rendered.depth,
            nocs,
            point_map,
        });
    }
    let scene = SyntheticScene {
        seed,
        object: spec.object,
        canonical_pts,
        frames,
        gt_relative: relatives[1..].to_vec(),
    };
    scene.self_check()?;
    Ok(scene)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfidenceModel {
    /// Zero on injected outliers, `1 / (1 + noise_sigma)` elsewhere.
    Oracle,
    /// One on every valid pixel.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorruptionSpec {
    /// Gaussian noise on point maps and depth, meters.
    pub noise_sigma: f64,
    pub outlier_frac: f64,
    /// Radius of the ball outliers are drawn from, meters.
    pub outlier_scale: f64,
    pub confidence_model: ConfidenceModel,
    pub seed: u64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        Self {
            noise_sigma: 0.0,
            outlier_frac: 0.0,
            outlier_scale: 0.5,
            confidence_model: ConfidenceModel::Oracle,
            seed: 0,
        }
    }
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(GeomError::InvalidValue("noise_sigma must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.outlier_frac) {
            return Err(GeomError::InvalidValue("outlier_frac must lie in [0, 1)".into()));
        }
        if !(self.outlier_scale >= 0.0 && self.outlier_scale.is_finite()) {
            return Err(GeomError::InvalidValue("outlier_scale must be >= 0".into()));
        }
        Ok(())
    }

    pub fn is_clean(&self) -> bool {
        self.noise_sigma == 0.0 && self.outlier_frac == 0.0
    }
}

/// Prediction-like copy of `scene`: Gaussian noise on point maps and depth,
/// a fraction of point-map pixels replaced by outliers, and confidences set
/// by the chosen model. NOCS maps and ground truth are untouched.
pub fn corrupt(scene: &SyntheticScene, spec: &CorruptionSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let mut out = scene.clone();
    let mut noise = rng_for(spec.seed, Stream::Noise);
    let mut outliers = rng_for(spec.seed, Stream::Outliers);
    let inlier_conf = match spec.confidence_model {
        ConfidenceModel::Oracle => 1.0 / (1.0 + spec.noise_sigma),
        ConfidenceModel::Uniform => 1.0,
    };
    for f in &mut out.frames {
        for p in 0..f.point_map.len() {
            if f.point_map.confidence[p] == 0.0 {
                continue;
            }
            let mut q = f.point_map.points[p];
            if spec.noise_sigma > 0.0 {
                q += gaussian_vec3(&mut noise, spec.noise_sigma);
            }
            let is_outlier = spec.outlier_frac > 0.0 && outliers.random_bool(spec.outlier_frac);
            if is_outlier {
                q += uniform_in_ball(&mut outliers, spec.outlier_scale);
            }
            f.point_map.points[p] = q;
            f.point_map.confidence[p] = match (spec.confidence_model, is_outlier) {
                (ConfidenceModel::Oracle, true) => 0.0,
                _ => inlier_conf,
            };
        }
        if spec.noise_sigma > 0.0 {
            for d in f.depth.values.iter_mut().filter(|d| **d > 0.0) {
                let noisy = *d + gaussian_vec3(&mut noise, spec.noise_sigma).x;
                // keep the pixel valid
                *d = noisy.max(1e-3);
            }
        }
    }
    Ok(out)
}

/// `k` distinct pixels from `valid`, chosen by a seeded partial shuffle and
/// returned in ascending order. All of `valid` when `k >= valid.len()`.
pub fn sample_pixels(valid: &[usize], k: usize, seed: u64) -> Vec<usize> {
    if k >= valid.len() {
        return valid.to_vec();
    }
    let mut rng = rng_for(seed, Stream::Sampler);
    let mut pool = valid.to_vec();
    for i in 0..k {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
    }
    let mut picked = pool[..k].to_vec();
    picked.sort_unstable();
    picked
}

/// Whether every frame has enough usable pixels for the relative solver.
pub fn has_min_coverage(scene: &SyntheticScene) -> bool {
    (0..scene.num_frames()).all(|i| scene.valid_pixels(i).len() >= MIN_VALID_PIXELS)
}
