//! Weighted Procrustes / Umeyama solvers and the pose-recovery procedures
//! built on them: anisotropic NOCS-to-camera fitting and the two-step
//! Sim(3) → SE(3) relative pose between an anchor and a query frame.

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::camera::PointMap;
use crate::error::{GeomError, Result};
use crate::transforms::{AnisoSimilarity, Mat3, RigidTransform, Rotation3, Similarity, Vec3};

/// Relative singular-value threshold below which a direction counts as absent.
const RANK_TOL: f64 = 1e-12;
/// Minimum number of usable pixels per frame for the relative-pose solver.
pub const MIN_VALID_PIXELS: usize = 16;
pub const SA3_MAX_ITERS: usize = 100;
const SA3_STOP_REL: f64 = 1e-12;
const SA3_FAIL_REL: f64 = 1e-6;

/// Paired point sets with non-negative weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedCorrespondences {
    src: Vec<Vec3>,
    dst: Vec<Vec3>,
    w: Vec<f64>,
}

impl WeightedCorrespondences {
    pub fn new(src: Vec<Vec3>, dst: Vec<Vec3>, w: Vec<f64>) -> Result<Self> {
        if src.len() != dst.len() {
            return Err(GeomError::LengthMismatch {
                left: src.len(),
                right: dst.len(),
            });
        }
        if w.len() != src.len() {
            return Err(GeomError::LengthMismatch {
                left: src.len(),
                right: w.len(),
            });
        }
        if src.len() < 3 {
            return Err(GeomError::InsufficientPoints {
                needed: 3,
                got: src.len(),
            });
        }
        if !w.iter().all(|x| x.is_finite() && *x >= 0.0) {
            return Err(GeomError::InvalidValue("weights must be finite and >= 0".into()));
        }
        if !(w.iter().sum::<f64>() > 0.0) {
            return Err(GeomError::InvalidValue("weights sum to zero".into()));
        }
        let finite = |p: &Vec3| p.iter().all(|x| x.is_finite());
        if !src.iter().all(finite) || !dst.iter().all(finite) {
            return Err(GeomError::InvalidValue("non-finite coordinate".into()));
        }
        Ok(Self { src, dst, w })
    }

    pub fn uniform(src: Vec<Vec3>, dst: Vec<Vec3>) -> Result<Self> {
        let w = vec![1.0; src.len()];
        Self::new(src, dst, w)
    }

    pub fn src(&self) -> &[Vec3] {
        &self.src
    }

    pub fn dst(&self) -> &[Vec3] {
        &self.dst
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    /// Number of pairs with strictly positive weight.
    pub fn support(&self) -> usize {
        self.w.iter().filter(|w| **w > 0.0).count()
    }

    /// Weighted sum of squared residuals of `f(src)` against `dst`, with
    /// weights normalized to sum to one.
    pub fn weighted_sse(&self, f: impl Fn(&Vec3) -> Vec3) -> f64 {
        let total: f64 = self.w.iter().sum();
        self.src
            .iter()
            .zip(&self.dst)
            .zip(&self.w)
            .filter(|(_, w)| **w > 0.0)
            .map(|((s, d), w)| (w / total) * (f(s) - d).norm_squared())
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult<T> {
    pub transform: T,
    /// Weighted RMS residual, weights normalized to sum to one.
    pub rmse: f64,
    /// `false` when the cross-covariance lost its third direction.
    pub rank_ok: bool,
}

/// Weighted first and second moments of a correspondence set.
struct Moments {
    mu_src: Vec3,
    mu_dst: Vec3,
    /// `Σ ŵ (d - μd)(s - μs)ᵀ`
    cross: Mat3,
    /// `Σ ŵ (s - μs)(s - μs)ᵀ`
    src_cov: Mat3,
}

fn moments(c: &WeightedCorrespondences) -> Moments {
    let total: f64 = c.w.iter().sum();
    let mut mu_src = Vec3::zeros();
    let mut mu_dst = Vec3::zeros();
    for ((s, d), w) in c.src.iter().zip(&c.dst).zip(&c.w) {
        if *w > 0.0 {
            let wn = w / total;
            mu_src += s * wn;
            mu_dst += d * wn;
        }
    }
    let mut cross = Mat3::zeros();
    let mut src_cov = Mat3::zeros();
    for ((s, d), w) in c.src.iter().zip(&c.dst).zip(&c.w) {
        if *w > 0.0 {
            let wn = w / total;
            let ds = s - mu_src;
            cross += (d - mu_dst) * ds.transpose() * wn;
            src_cov += ds * ds.transpose() * wn;
        }
    }
    Moments {
        mu_src,
        mu_dst,
        cross,
        src_cov,
    }
}

struct Procrustes {
    r: Mat3,
    /// `tr(D·E)` where `D` are the singular values and `E` the sign correction.
    trace_ds: f64,
    rank_ok: bool,
}

/// Optimal rotation maximizing `tr(Rᵀ·cross)` with reflection correction.
fn procrustes(cross: &Mat3) -> Result<Procrustes> {
    let svd = cross.svd(true, true);
    let u = svd.u.expect("svd computed with u");
    let v_t = svd.v_t.expect("svd computed with v_t");
    let sv = svd.singular_values;
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|a, b| sv[*b].total_cmp(&sv[*a]));
    let (s1, s2, s3) = (sv[idx[0]], sv[idx[1]], sv[idx[2]]);
    if !(s1 > 0.0) || s2 < RANK_TOL * s1 {
        return Err(GeomError::DegenerateGeometry(
            "weighted cross-covariance has rank < 2".into(),
        ));
    }
    let mut e = Vec3::repeat(1.0);
    if (u.determinant() * v_t.determinant()) < 0.0 {
        e[idx[2]] = -1.0;
    }
    let r = u * Mat3::from_diagonal(&e) * v_t;
    let trace_ds = sv.component_mul(&e).sum();
    Ok(Procrustes {
        r,
        trace_ds,
        rank_ok: s3 >= RANK_TOL * s1,
    })
}

fn rmse_of(c: &WeightedCorrespondences, f: impl Fn(&Vec3) -> Vec3) -> f64 {
    c.weighted_sse(f).max(0.0).sqrt()
}

/// Weighted Umeyama similarity: minimizes `Σ w ‖s·R·src + t − dst‖²`.
pub fn umeyama_sim3(c: &WeightedCorrespondences) -> Result<AlignmentResult<Similarity>> {
    let m = moments(c);
    let var_src = m.src_cov.trace();
    if !(var_src > 0.0) {
        return Err(GeomError::DegenerateGeometry("source points coincide".into()));
    }
    let p = procrustes(&m.cross)?;
    let s = p.trace_ds / var_src;
    let r = Rotation3::from_matrix_unchecked(p.r);
    let t = m.mu_dst - p.r * m.mu_src * s;
    let transform = Similarity::new(s, r, t)
        .map_err(|_| GeomError::DegenerateGeometry("non-positive similarity scale".into()))?;
    Ok(AlignmentResult {
        rmse: rmse_of(c, |x| transform.apply(x)),
        transform,
        rank_ok: p.rank_ok,
    })
}

/// Weighted Kabsch: minimizes `Σ w ‖R·src + t − dst‖²` with unit scale.
pub fn umeyama_se3(c: &WeightedCorrespondences) -> Result<AlignmentResult<RigidTransform>> {
    let m = moments(c);
    let p = procrustes(&m.cross)?;
    let r = Rotation3::from_matrix_unchecked(p.r);
    let transform = RigidTransform::new(r, m.mu_dst - p.r * m.mu_src);
    Ok(AlignmentResult {
        rmse: rmse_of(c, |x| transform.apply(x)),
        transform,
        rank_ok: p.rank_ok,
    })
}

/// Outcome of the anisotropic fit including its convergence trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Sa3Fit {
    pub alignment: AlignmentResult<AnisoSimilarity>,
    pub iterations: usize,
    /// Objective after each accepted iteration (normalized weights).
    pub objective_history: Vec<f64>,
}

/// Fits `dst ≈ R·diag(scale)·src + t` with a positive per-axis scale by
/// alternating weighted Kabsch steps and closed-form per-axis scale updates.
///
/// The scale is initialized from the column norms of the weighted affine
/// least-squares fit, which is exact on noiseless data.
pub fn fit_sa3_nocs(c: &WeightedCorrespondences) -> Result<AlignmentResult<AnisoSimilarity>> {
    fit_sa3_nocs_traced(c).map(|f| f.alignment)
}

pub fn fit_sa3_nocs_traced(c: &WeightedCorrespondences) -> Result<Sa3Fit> {
    let support = c.support();
    if support < 4 {
        return Err(GeomError::InsufficientPoints {
            needed: 4,
            got: support,
        });
    }
    let m = moments(c);
    let eig = SymmetricEigen::new(m.src_cov);
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min();
    if !(lmax > 0.0) || lmin < RANK_TOL * lmax {
        return Err(GeomError::DegenerateGeometry(
            "source points do not span three dimensions".into(),
        ));
    }
    let src_cov_inv = m
        .src_cov
        .try_inverse()
        .ok_or_else(|| GeomError::DegenerateGeometry("singular source covariance".into()))?;
    let affine = m.cross * src_cov_inv;
    let mut scale = Vec3::from_fn(|j, _| affine.column(j).norm());
    if !scale.iter().all(|s| *s > 0.0 && s.is_finite()) {
        return Err(GeomError::DegenerateGeometry("target collapses along an axis".into()));
    }

    let total: f64 = c.w.iter().sum();
    let active: Vec<(Vec3, Vec3, f64)> = c
        .src
        .iter()
        .zip(&c.dst)
        .zip(&c.w)
        .filter(|(_, w)| **w > 0.0)
        .map(|((s, d), w)| (*s, *d, w / total))
        .collect();
    let objective = |r: &Mat3, scale: &Vec3, t: &Vec3| -> f64 {
        active
            .iter()
            .map(|(s, d, w)| w * (r * scale.component_mul(s) + t - d).norm_squared())
            .sum()
    };
    let spread: f64 = active
        .iter()
        .map(|(_, d, w)| w * (d - m.mu_dst).norm_squared())
        .sum();
    let floor = 1e-28 * spread.max(f64::MIN_POSITIVE);

    // Kabsch step for a fixed scale: the cross-covariance of the scaled
    // source is `cross · diag(scale)`.
    let kabsch = |scale: &Vec3| -> Result<(Mat3, Vec3, bool)> {
        let p = procrustes(&(m.cross * Mat3::from_diagonal(scale)))?;
        let t = m.mu_dst - p.r * scale.component_mul(&m.mu_src);
        Ok((p.r, t, p.rank_ok))
    };

    let (mut r, mut t, mut rank_ok) = kabsch(&scale)?;
    let mut best = objective(&r, &scale, &t);
    let mut history = vec![best];
    let mut iterations = 0;
    let mut last_rel = f64::INFINITY;
    while iterations < SA3_MAX_ITERS && best > floor {
        iterations += 1;
        // Per-axis scale for fixed (R, t): with y = Rᵀ(d − t) the objective
        // separates into Σ ŵ (s_j c_j − y_j)².
        let rt = r.transpose();
        let mut num = Vec3::zeros();
        let mut den = Vec3::zeros();
        for (s, d, w) in &active {
            let y = rt * (d - t);
            num += s.component_mul(&y) * *w;
            den += s.component_mul(s) * *w;
        }
        let new_scale = num.component_div(&den);
        if !new_scale.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return Err(GeomError::DegenerateGeometry(
                "per-axis scale update is non-positive".into(),
            ));
        }
        let (new_r, new_t, new_rank) = kabsch(&new_scale)?;
        let value = objective(&new_r, &new_scale, &new_t);
        if value > best {
            // Rounding-level increase: the previous iterate is the fixed point.
            last_rel = 0.0;
            break;
        }
        last_rel = (best - value) / best;
        debug_assert!(value <= best);
        scale = new_scale;
        r = new_r;
        t = new_t;
        rank_ok = new_rank;
        best = value;
        history.push(best);
        if last_rel < SA3_STOP_REL {
            break;
        }
    }
    if iterations == SA3_MAX_ITERS && best > floor && last_rel > SA3_FAIL_REL {
        return Err(GeomError::NoConvergence {
            iterations,
            relative_decrease: last_rel,
        });
    }
    let transform = AnisoSimilarity::new(Rotation3::from_matrix_unchecked(r), scale, t)
        .map_err(|_| GeomError::DegenerateGeometry("non-positive scale".into()))?;
    Ok(Sa3Fit {
        alignment: AlignmentResult {
            transform,
            rmse: best.max(0.0).sqrt(),
            rank_ok,
        },
        iterations,
        objective_history: history,
    })
}

/// Result of the anchor-calibrated relative pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativePose {
    /// Maps anchor-frame coordinates into the query camera frame.
    pub transform: RigidTransform,
    /// Similarity taking the predicted point maps to metric anchor camera space.
    pub anchor_calibration: Similarity,
    pub anchor_rmse: f64,
    pub query_rmse: f64,
    pub rank_ok: bool,
}

fn paired_correspondences(pm: &PointMap, cam: &PointMap, frame: &str) -> Result<WeightedCorrespondences> {
    if !pm.same_shape(cam) {
        return Err(GeomError::DimensionMismatch(format!(
            "{frame}: point map {}×{} vs camera points {}×{}",
            pm.width, pm.height, cam.width, cam.height
        )));
    }
    let mut src = Vec::new();
    let mut dst = Vec::new();
    let mut w = Vec::new();
    for i in 0..pm.len() {
        let wi = pm.confidence[i] * cam.confidence[i];
        if wi > 0.0 {
            src.push(pm.points[i]);
            dst.push(cam.points[i]);
            w.push(wi);
        }
    }
    if src.len() < MIN_VALID_PIXELS {
        return Err(GeomError::InsufficientPoints {
            needed: MIN_VALID_PIXELS,
            got: src.len(),
        });
    }
    WeightedCorrespondences::new(src, dst, w)
}

/// Two-step relative pose from predicted point maps (anchor-frame
/// coordinates, arbitrary global scale) and depth-derived camera points.
///
/// 1. Sim(3) aligning the anchor point map to the anchor camera points.
/// 2. SE(3) aligning the calibrated query point map to the query camera
///    points.
///
/// Pixel weights are the products of the two maps' confidences.
pub fn relative_pose_two_step(
    anchor_pm: &PointMap,
    anchor_cam: &PointMap,
    query_pm: &PointMap,
    query_cam: &PointMap,
) -> Result<RelativePose> {
    let anchor = paired_correspondences(anchor_pm, anchor_cam, "anchor")?;
    let calib = umeyama_sim3(&anchor)?;
    let query = paired_correspondences(query_pm, query_cam, "query")?;
    let calibrated = WeightedCorrespondences {
        src: calib.transform.apply_all(&query.src),
        dst: query.dst,
        w: query.w,
    };
    let rel = umeyama_se3(&calibrated)?;
    Ok(RelativePose {
        transform: rel.transform,
        anchor_calibration: calib.transform,
        anchor_rmse: calib.rmse,
        query_rmse: rel.rmse,
        rank_ok: calib.rank_ok && rel.rank_ok,
    })
}

/// Isotropic scale as the mean magnitude of a per-axis size vector.
pub fn isotropic_scale_from_size(size: &Vec3) -> Result<f64> {
    if !size.iter().all(|s| *s > 0.0 && s.is_finite()) {
        return Err(GeomError::NonPositiveSize);
    }
    Ok(size.iter().map(|s| s.abs()).sum::<f64>() / 3.0)
}
