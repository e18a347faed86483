//! Pose evaluation metrics: thresholded (deg, cm) accuracy, exact oriented
//! 3D box IoU, ADD / ADD-S, MSSD / MSPD, and AUC / VUS aggregation.
//!
//! All threshold comparisons are inclusive (`<=` for errors, `>=` for IoU).

use serde::{Deserialize, Serialize};

use crate::camera::Intrinsics;
use crate::error::{GeomError, Result};
use crate::transforms::{geodesic_angle_deg, AnisoSimilarity, Mat3, RigidTransform, Rotation3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox3 {
    /// Box center and orientation.
    pub pose: RigidTransform,
    /// Full side lengths along the box axes, meters.
    pub extents: Vec3,
}

impl OrientedBox3 {
    pub fn new(pose: RigidTransform, extents: Vec3) -> Result<Self> {
        if !extents.iter().all(|e| *e > 0.0 && e.is_finite()) {
            return Err(GeomError::NonPositiveSize);
        }
        Ok(Self { pose, extents })
    }

    /// Axis-aligned box centered at `center`.
    pub fn axis_aligned(center: Vec3, extents: Vec3) -> Result<Self> {
        Self::new(RigidTransform::from_translation(center), extents)
    }

    pub fn volume(&self) -> f64 {
        self.extents.iter().product()
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        let local = self.pose.r.matrix().transpose() * (p - self.pose.t);
        (0..3).all(|k| local[k].abs() <= 0.5 * self.extents[k])
    }

    /// Outward half-spaces `n·x <= d` of the six faces.
    pub fn half_spaces(&self) -> [(Vec3, f64); 6] {
        let r = self.pose.r.matrix();
        std::array::from_fn(|f| {
            let axis = f / 2;
            let sign = if f % 2 == 0 { 1.0 } else { -1.0 };
            let n: Vec3 = r.column(axis) * sign;
            (n, n.dot(&self.pose.t) + 0.5 * self.extents[axis])
        })
    }

    pub fn corners(&self) -> [Vec3; 8] {
        std::array::from_fn(|i| {
            let local = Vec3::new(
                if i & 1 == 0 { -0.5 } else { 0.5 },
                if i & 2 == 0 { -0.5 } else { 0.5 },
                if i & 4 == 0 { -0.5 } else { 0.5 },
            )
            .component_mul(&self.extents);
            self.pose.apply(&local)
        })
    }

    /// The box surface as six planar quads.
    fn faces(&self) -> Vec<Vec<Vec3>> {
        let c = self.corners();
        [
            [0, 2, 6, 4],
            [1, 5, 7, 3],
            [0, 4, 5, 1],
            [2, 3, 7, 6],
            [0, 1, 3, 2],
            [4, 6, 7, 5],
        ]
        .iter()
        .map(|q| q.iter().map(|&i| c[i]).collect())
        .collect()
    }
}

/// Clips a convex polytope (list of planar convex faces) to `n·x <= d`,
/// closing the cut with a cap face.
fn clip_polytope(faces: Vec<Vec<Vec3>>, n: &Vec3, d: f64) -> Vec<Vec<Vec3>> {
    if faces.iter().flatten().all(|p| n.dot(p) - d <= 0.0) {
        return faces;
    }
    let mut out = Vec::with_capacity(faces.len() + 1);
    let mut cap = Vec::new();
    for face in faces {
        let mut clipped = Vec::with_capacity(face.len() + 2);
        for i in 0..face.len() {
            let cur = face[i];
            let next = face[(i + 1) % face.len()];
            let dc = n.dot(&cur) - d;
            let dn = n.dot(&next) - d;
            if dc <= 0.0 {
                clipped.push(cur);
                if dc == 0.0 {
                    cap.push(cur);
                }
            }
            if (dc < 0.0 && dn > 0.0) || (dc > 0.0 && dn < 0.0) {
                let ip = cur + (next - cur) * (dc / (dc - dn));
                clipped.push(ip);
                cap.push(ip);
            }
        }
        if clipped.len() >= 3 {
            out.push(clipped);
        }
    }
    if cap.len() >= 3 {
        out.push(order_on_plane(cap, n));
    }
    out
}

/// Sorts coplanar points by angle around their centroid.
fn order_on_plane(mut pts: Vec<Vec3>, n: &Vec3) -> Vec<Vec3> {
    let c = pts.iter().sum::<Vec3>() / pts.len() as f64;
    let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = n.cross(&helper).normalize();
    let e2 = n.cross(&e1);
    pts.sort_by(|a, b| {
        let (da, db) = (a - c, b - c);
        let ta = da.dot(&e2).atan2(da.dot(&e1));
        let tb = db.dot(&e2).atan2(db.dot(&e1));
        ta.total_cmp(&tb)
    });
    pts
}

/// Volume of a convex polytope by fanning each face to an interior point.
fn polytope_volume(faces: &[Vec<Vec3>]) -> f64 {
    let count: usize = faces.iter().map(|f| f.len()).sum();
    if faces.len() < 4 || count == 0 {
        return 0.0;
    }
    let c = faces.iter().flatten().sum::<Vec3>() / count as f64;
    let mut vol = 0.0;
    for f in faces {
        let a = f[0] - c;
        for k in 1..f.len() - 1 {
            let b = f[k] - c;
            let e = f[k + 1] - c;
            vol += Mat3::from_columns(&[a, b, e]).determinant().abs();
        }
    }
    vol / 6.0
}

/// Exact intersection volume of two oriented boxes.
pub fn box_intersection_volume(a: &OrientedBox3, b: &OrientedBox3) -> f64 {
    let mut faces = a.faces();
    for (n, d) in b.half_spaces() {
        faces = clip_polytope(faces, &n, d);
        if faces.is_empty() {
            return 0.0;
        }
    }
    polytope_volume(&faces)
}

pub fn box_iou3d(a: &OrientedBox3, b: &OrientedBox3) -> f64 {
    let inter = box_intersection_volume(a, b);
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// IoU after rescaling `pred` so its mean extent matches `gt`'s.
pub fn box_iou3d_scale_normalized(pred: &OrientedBox3, gt: &OrientedBox3) -> f64 {
    let ratio = gt.extents.mean() / pred.extents.mean();
    let rescaled = OrientedBox3 {
        pose: pred.pose,
        extents: pred.extents * ratio,
    };
    box_iou3d(&rescaled, gt)
}

/// Object model as a point sample with its diameter (max pairwise distance).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPoints {
    pts: Vec<Vec3>,
    diameter: f64,
}

impl ModelPoints {
    pub fn new(pts: Vec<Vec3>) -> Result<Self> {
        if pts.len() < 4 {
            return Err(GeomError::InsufficientPoints {
                needed: 4,
                got: pts.len(),
            });
        }
        let mut d2 = 0.0f64;
        for i in 0..pts.len() {
            for j in (i + 1)..pts.len() {
                d2 = d2.max((pts[i] - pts[j]).norm_squared());
            }
        }
        if !(d2 > 0.0) {
            return Err(GeomError::DegenerateGeometry("model points coincide".into()));
        }
        Ok(Self {
            pts,
            diameter: d2.sqrt(),
        })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.pts
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    /// Axis-aligned bounds `(min, max)` in the model frame.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in &self.pts {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }
}

/// Oriented bounding box of a model placed by an SA(3) pose.
pub fn posed_box(pose: &AnisoSimilarity, model: &ModelPoints) -> Result<OrientedBox3> {
    let (lo, hi) = model.bounds();
    posed_box_from_bounds(pose, &lo, &hi)
}

/// Oriented box of the model-frame bounds `[lo, hi]` placed by `pose`.
pub fn posed_box_from_bounds(pose: &AnisoSimilarity, lo: &Vec3, hi: &Vec3) -> Result<OrientedBox3> {
    let center = pose.apply(&((lo + hi) / 2.0));
    OrientedBox3::new(RigidTransform::new(pose.r, center), (hi - lo).component_mul(&pose.scale))
}

/// Symmetry transforms of an object in its model frame; always contains the
/// identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetrySet {
    transforms: Vec<RigidTransform>,
}

impl SymmetrySet {
    pub fn identity_only() -> Self {
        Self {
            transforms: vec![RigidTransform::identity()],
        }
    }

    /// Adds the identity if it is not already present.
    pub fn new(mut transforms: Vec<RigidTransform>) -> Self {
        let has_identity = transforms.iter().any(|t| {
            (t.r.matrix() - Mat3::identity()).norm() < 1e-12 && t.t.norm() < 1e-12
        });
        if !has_identity {
            transforms.insert(0, RigidTransform::identity());
        }
        Self { transforms }
    }

    /// `n`-fold discrete rotational symmetry about `axis` through the origin.
    pub fn discrete_rotations(axis: &Vec3, n: usize) -> Self {
        let transforms = (0..n.max(1))
            .map(|k| {
                let angle = std::f64::consts::TAU * k as f64 / n.max(1) as f64;
                RigidTransform::new(Rotation3::from_axis_angle(axis, angle), Vec3::zeros())
            })
            .collect();
        Self::new(transforms)
    }

    pub fn transforms(&self) -> &[RigidTransform] {
        &self.transforms
    }
}

/// Rotation error (degrees) and translation error (meters).
pub fn pose_errors(pred: &RigidTransform, gt: &RigidTransform) -> (f64, f64) {
    (geodesic_angle_deg(&pred.r, &gt.r), (pred.t - gt.t).norm())
}

/// Fraction of pairs with rotation error `<= deg` and translation error
/// `<= cm / 100` meters.
pub fn threshold_accuracy(preds: &[RigidTransform], gts: &[RigidTransform], deg: f64, cm: f64) -> Result<f64> {
    if preds.len() != gts.len() {
        return Err(GeomError::LengthMismatch {
            left: preds.len(),
            right: gts.len(),
        });
    }
    if preds.is_empty() {
        return Err(GeomError::EmptyInput);
    }
    let hits = preds
        .iter()
        .zip(gts)
        .filter(|(p, g)| {
            let (r, t) = pose_errors(p, g);
            r <= deg && t <= cm / 100.0
        })
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Mean distance between corresponding posed model points.
pub fn add_metric(pred: &AnisoSimilarity, gt: &AnisoSimilarity, model: &ModelPoints) -> f64 {
    let pts = model.points();
    pts.iter()
        .map(|x| (pred.apply(x) - gt.apply(x)).norm())
        .sum::<f64>()
        / pts.len() as f64
}

/// Mean over predicted model points of the distance to the nearest
/// ground-truth model point.
pub fn adds_metric(pred: &AnisoSimilarity, gt: &AnisoSimilarity, model: &ModelPoints) -> f64 {
    let pts = model.points();
    let gt_pts: Vec<Vec3> = pts.iter().map(|x| gt.apply(x)).collect();
    pts.iter()
        .map(|x| {
            let p = pred.apply(x);
            gt_pts
                .iter()
                .map(|g| (p - g).norm_squared())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum::<f64>()
        / pts.len() as f64
}

/// Maximum symmetry-aware surface distance.
pub fn mssd(pred: &AnisoSimilarity, gt: &AnisoSimilarity, model: &ModelPoints, sym: &SymmetrySet) -> f64 {
    let pred_pts: Vec<Vec3> = model.points().iter().map(|x| pred.apply(x)).collect();
    sym.transforms()
        .iter()
        .map(|s| {
            model
                .points()
                .iter()
                .zip(&pred_pts)
                .map(|(x, p)| (p - gt.apply(&s.apply(x))).norm())
                .fold(0.0, f64::max)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Maximum symmetry-aware projection distance, pixels.
pub fn mspd(
    pred: &AnisoSimilarity,
    gt: &AnisoSimilarity,
    model: &ModelPoints,
    sym: &SymmetrySet,
    k: &Intrinsics,
) -> Result<f64> {
    let pred_px = model
        .points()
        .iter()
        .map(|x| k.project_point(&pred.apply(x)))
        .collect::<Result<Vec<_>>>()?;
    let mut best = f64::INFINITY;
    for s in sym.transforms() {
        let mut worst = 0.0f64;
        for (x, p) in model.points().iter().zip(&pred_px) {
            let g = k.project_point(&gt.apply(&s.apply(x)))?;
            worst = worst.max(((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2)).sqrt());
        }
        best = best.min(worst);
    }
    Ok(best)
}

/// Uniform inclusive grid `start, start + step, …, stop`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdGrid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl ThresholdGrid {
    pub const IOU: ThresholdGrid = ThresholdGrid {
        start: 0.25,
        stop: 0.95,
        step: 0.05,
    };
    pub const ROT_DEG: ThresholdGrid = ThresholdGrid {
        start: 1.0,
        stop: 15.0,
        step: 1.0,
    };
    pub const TRANS_CM: ThresholdGrid = ThresholdGrid {
        start: 1.0,
        stop: 5.0,
        step: 1.0,
    };

    pub fn points(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0) || !(self.stop >= self.start) {
            return Err(GeomError::InvalidValue("threshold grid needs step > 0 and stop >= start".into()));
        }
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        // Snap to 12 decimals so that e.g. 0.25 + 0.05 is exactly 0.3 and
        // values sitting on a threshold count as hits.
        Ok((0..=n)
            .map(|i| ((self.start + i as f64 * self.step) * 1e12).round() / 1e12)
            .collect())
    }
}

/// Mean over the grid of the fraction of values `>= threshold`.
pub fn auc(values: &[f64], grid: &ThresholdGrid) -> Result<f64> {
    if values.is_empty() {
        return Err(GeomError::EmptyInput);
    }
    let th = grid.points()?;
    let total: f64 = th
        .iter()
        .map(|t| values.iter().filter(|v| **v >= *t).count() as f64 / values.len() as f64)
        .sum();
    Ok(total / th.len() as f64)
}

/// Mean joint accuracy over a (degrees × centimeters) threshold grid.
pub fn vus(rot_errs_deg: &[f64], trans_errs_m: &[f64], rot_grid: &ThresholdGrid, trans_grid_cm: &ThresholdGrid) -> Result<f64> {
    if rot_errs_deg.len() != trans_errs_m.len() {
        return Err(GeomError::LengthMismatch {
            left: rot_errs_deg.len(),
            right: trans_errs_m.len(),
        });
    }
    if rot_errs_deg.is_empty() {
        return Err(GeomError::EmptyInput);
    }
    let rot = rot_grid.points()?;
    let trans = trans_grid_cm.points()?;
    let n = rot_errs_deg.len() as f64;
    let mut total = 0.0;
    for d in &rot {
        for c in &trans {
            let hits = rot_errs_deg
                .iter()
                .zip(trans_errs_m)
                .filter(|(r, t)| **r <= *d && **t <= *c / 100.0)
                .count();
            total += hits as f64 / n;
        }
    }
    Ok(total / (rot.len() * trans.len()) as f64)
}

/// Which thresholds a report aggregates over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricThresholds {
    /// `(degrees, centimeters)` pairs.
    pub pose: Vec<(f64, f64)>,
    pub iou: Vec<f64>,
    pub auc_grid: ThresholdGrid,
    pub vus_rot_deg: ThresholdGrid,
    pub vus_trans_cm: ThresholdGrid,
}

impl Default for MetricThresholds {
    fn default() -> Self {
        Self {
            pose: vec![(5.0, 2.0), (5.0, 5.0), (10.0, 2.0), (10.0, 5.0)],
            iou: vec![0.25, 0.5, 0.75],
            auc_grid: ThresholdGrid::IOU,
            vus_rot_deg: ThresholdGrid::ROT_DEG,
            vus_trans_cm: ThresholdGrid::TRANS_CM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: String,
    pub rot_err_deg: f64,
    pub trans_err_m: f64,
    pub iou: Option<f64>,
    pub niou: Option<f64>,
    pub add: Option<f64>,
    pub adds: Option<f64>,
    pub mssd: Option<f64>,
    pub mspd: Option<f64>,
}

impl InstanceRecord {
    /// Pose errors only; model-based metrics left empty.
    pub fn from_pose_errors(id: impl Into<String>, rot_err_deg: f64, trans_err_m: f64) -> Self {
        Self {
            id: id.into(),
            rot_err_deg,
            trans_err_m,
            iou: None,
            niou: None,
            add: None,
            adds: None,
            mssd: None,
            mspd: None,
        }
    }

    /// Every metric for one predicted/ground-truth SA(3) pair.
    pub fn evaluate(
        id: impl Into<String>,
        pred: &AnisoSimilarity,
        gt: &AnisoSimilarity,
        model: &ModelPoints,
        sym: &SymmetrySet,
        k: Option<&Intrinsics>,
    ) -> Result<Self> {
        let (rot_err_deg, trans_err_m) = pose_errors(&pred.rigid_part(), &gt.rigid_part());
        let pb = posed_box(pred, model)?;
        let gb = posed_box(gt, model)?;
        let add = add_metric(pred, gt, model);
        let adds = adds_metric(pred, gt, model);
        assert!(adds <= add + 1e-12, "ADD-S ({adds}) exceeds ADD ({add})");
        let mspd = k.map(|k| mspd(pred, gt, model, sym, k)).transpose()?;
        Ok(Self {
            id: id.into(),
            rot_err_deg,
            trans_err_m,
            iou: Some(box_iou3d(&pb, &gb)),
            niou: Some(box_iou3d_scale_normalized(&pb, &gb)),
            add: Some(add),
            adds: Some(adds),
            mssd: Some(mssd(pred, gt, model, sym)),
            mspd,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdAccuracy {
    pub deg: f64,
    pub cm: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IouAccuracy {
    pub threshold: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub count: usize,
    pub threshold_accuracies: Vec<ThresholdAccuracy>,
    pub iou_accuracies: Vec<IouAccuracy>,
    pub niou_accuracies: Vec<IouAccuracy>,
    pub auc_iou: Option<f64>,
    pub vus: f64,
    pub median_rot_err_deg: f64,
    pub median_trans_err_m: f64,
    pub mean_add: Option<f64>,
    pub mean_adds: Option<f64>,
    pub mean_mssd: Option<f64>,
    pub mean_mspd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub instances: Vec<InstanceRecord>,
    pub aggregate: AggregateMetrics,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.collect();
    v.filter(|v| !v.is_empty())
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

impl MetricReport {
    pub fn build(instances: Vec<InstanceRecord>, th: &MetricThresholds) -> Result<Self> {
        if instances.is_empty() {
            return Err(GeomError::EmptyInput);
        }
        let n = instances.len() as f64;
        let rot: Vec<f64> = instances.iter().map(|r| r.rot_err_deg).collect();
        let trans: Vec<f64> = instances.iter().map(|r| r.trans_err_m).collect();
        let threshold_accuracies = th
            .pose
            .iter()
            .map(|&(deg, cm)| ThresholdAccuracy {
                deg,
                cm,
                accuracy: rot
                    .iter()
                    .zip(&trans)
                    .filter(|(r, t)| **r <= deg && **t <= cm / 100.0)
                    .count() as f64
                    / n,
            })
            .collect();
        let ious: Option<Vec<f64>> = instances.iter().map(|r| r.iou).collect();
        let nious: Option<Vec<f64>> = instances.iter().map(|r| r.niou).collect();
        let iou_acc = |vals: &Option<Vec<f64>>| -> Vec<IouAccuracy> {
            vals.as_ref()
                .map(|v| {
                    th.iou
                        .iter()
                        .map(|&t| IouAccuracy {
                            threshold: t,
                            accuracy: v.iter().filter(|x| **x >= t).count() as f64 / n,
                        })
                        .collect()
                })
                .unwrap_or_default()
        };
        for r in &instances {
            if let (Some(add), Some(adds)) = (r.add, r.adds) {
                assert!(adds <= add + 1e-12, "instance {}: ADD-S exceeds ADD", r.id);
            }
        }
        let aggregate = AggregateMetrics {
            count: instances.len(),
            threshold_accuracies,
            iou_accuracies: iou_acc(&ious),
            niou_accuracies: iou_acc(&nious),
            auc_iou: ious.as_ref().map(|v| auc(v, &th.auc_grid)).transpose()?,
            vus: vus(&rot, &trans, &th.vus_rot_deg, &th.vus_trans_cm)?,
            median_rot_err_deg: median(&rot),
            median_trans_err_m: median(&trans),
            mean_add: mean_of(instances.iter().map(|r| r.add)),
            mean_adds: mean_of(instances.iter().map(|r| r.adds)),
            mean_mssd: mean_of(instances.iter().map(|r| r.mssd)),
            mean_mspd: mean_of(instances.iter().map(|r| r.mspd)),
        };
        Ok(Self {
            instances,
            aggregate,
        })
    }
}
