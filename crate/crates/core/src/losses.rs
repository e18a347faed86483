//! Training losses as deterministic value functions, with analytic
//! gradients for the ones that are (piecewise) smooth, plus a central
//! finite-difference checker for those gradients.
//!
//! Gradients are flat vectors over the declared argument in row-major order
//! (point `i`, coordinate `j` → index `3·i + j`).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::transforms::{Rotation3, Vec3};

/// Loss hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// InfoNCE temperature.
    pub tau_infonce: f64,
    /// Keypoint repulsion threshold in meters.
    pub tau2: f64,
    /// Weight of the `-log Σ` uncertainty regularizer.
    pub alpha: f64,
    /// Smooth-L1 threshold.
    pub sl1_beta: f64,
    /// Log stabilizer in the InfoNCE numerator.
    pub eps: f64,
    /// Huber threshold of the camera loss.
    pub huber_delta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau_infonce: 1.0,
            tau2: 0.02,
            alpha: 1.0,
            sl1_beta: 0.1,
            eps: 1e-8,
            huber_delta: crate::camera::DEFAULT_HUBER_DELTA,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tau_infonce", self.tau_infonce),
            ("tau2", self.tau2),
            ("sl1_beta", self.sl1_beta),
            ("eps", self.eps),
            ("huber_delta", self.huber_delta),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(GeomError::InvalidValue(format!("{name} must be positive")));
            }
        }
        if !self.alpha.is_finite() {
            return Err(GeomError::InvalidValue("alpha must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub value: f64,
    pub grad: Option<Vec<f64>>,
}

impl LossValue {
    fn with_grad(value: f64, grad: Vec<f64>) -> Self {
        Self {
            value,
            grad: Some(grad),
        }
    }

    fn value_only(value: f64) -> Self {
        Self { value, grad: None }
    }
}

pub fn flatten(pts: &[Vec3]) -> Vec<f64> {
    pts.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

pub fn unflatten(x: &[f64]) -> Vec<Vec3> {
    x.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()
}

/// Index of the nearest point in `b`; ties go to the lowest index.
fn nearest(p: &Vec3, b: &[Vec3]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, q) in b.iter().enumerate() {
        let d2 = (p - q).norm_squared();
        if d2 < best.1 {
            best = (j, d2);
        }
    }
    best
}

/// Mean over `a` of the (squared) distance to the nearest point of `b`.
/// The gradient is w.r.t. `a` and flows through each nearest neighbor only.
pub fn chamfer_one_sided(a: &[Vec3], b: &[Vec3], squared: bool) -> Result<LossValue> {
    if a.is_empty() || b.is_empty() {
        return Err(GeomError::EmptySet);
    }
    let n = a.len() as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; 3 * a.len()];
    for (i, p) in a.iter().enumerate() {
        let (j, d2) = nearest(p, b);
        let diff = p - b[j];
        let g = if squared {
            value += d2;
            diff * 2.0
        } else {
            let d = d2.sqrt();
            value += d;
            if d > 0.0 {
                diff / d
            } else {
                Vec3::zeros()
            }
        };
        grad[3 * i..3 * i + 3].copy_from_slice((g / n).as_slice());
    }
    Ok(LossValue::with_grad(value / n, grad))
}

/// Mean over ordered pairs of `max(0, tau2 − ‖x − y‖)²`, normalized by
/// `M(M − 1)`. Gradient w.r.t. the keypoints.
pub fn diversity_loss(kpts: &[Vec3], tau2: f64) -> Result<LossValue> {
    let m = kpts.len();
    if m < 2 {
        return Err(GeomError::TooFewKeypoints(m));
    }
    let norm = (m * (m - 1)) as f64;
    let mut value = 0.0;
    let mut grad = vec![Vec3::zeros(); m];
    for i in 0..m {
        for j in (i + 1)..m {
            let diff = kpts[i] - kpts[j];
            let d = diff.norm();
            let gap = tau2 - d;
            if gap > 0.0 {
                // both orderings (i, j) and (j, i)
                value += 2.0 * gap * gap;
                if d > 0.0 {
                    let g = diff * (-4.0 * gap / d);
                    grad[i] += g;
                    grad[j] -= g;
                }
            }
        }
    }
    let grad = flatten(&grad).into_iter().map(|g| g / norm).collect();
    Ok(LossValue::with_grad(value / norm, grad))
}

/// Rotation, translation and per-axis size as regressed by a pose head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseParams {
    pub r: Rotation3,
    pub t: Vec3,
    pub size: Vec3,
}

impl PoseParams {
    /// `[R row-major (9), t (3), size (3)]`
    pub fn to_vec(&self) -> Vec<f64> {
        let m = self.r.matrix();
        let mut v: Vec<f64> = (0..3).flat_map(|i| (0..3).map(move |j| m[(i, j)])).collect();
        v.extend_from_slice(self.t.as_slice());
        v.extend_from_slice(self.size.as_slice());
        v
    }
}

/// `‖R_gt − R‖_F + ‖t_gt − t‖₂ + ‖s_gt − s‖₂`, gradient w.r.t.
/// `pred.to_vec()`.
pub fn pose_loss(pred: &PoseParams, gt: &PoseParams) -> LossValue {
    let (value, grad) = pose_loss_flat(&pred.to_vec(), &gt.to_vec());
    LossValue::with_grad(value, grad)
}

pub(crate) fn pose_loss_flat(p: &[f64], g: &[f64]) -> (f64, Vec<f64>) {
    let mut value = 0.0;
    let mut grad = vec![0.0; 15];
    for range in [0..9, 9..12, 12..15] {
        let norm = range.clone().map(|k| (p[k] - g[k]).powi(2)).sum::<f64>().sqrt();
        value += norm;
        if norm > 0.0 {
            for k in range {
                grad[k] = (p[k] - g[k]) / norm;
            }
        }
    }
    (value, grad)
}

pub fn smooth_l1(x: f64, beta: f64) -> f64 {
    let a = x.abs();
    if a < beta {
        0.5 * x * x / beta
    } else {
        a - 0.5 * beta
    }
}

fn smooth_l1_grad(x: f64, beta: f64) -> f64 {
    if x.abs() < beta {
        x / beta
    } else {
        x.signum()
    }
}

/// Element-wise smooth-L1 between predicted and target NOCS coordinates,
/// averaged over all `3M` entries. Gradient w.r.t. `pred`.
pub fn nocs_smooth_l1(pred: &[Vec3], gt: &[Vec3], beta: f64) -> Result<LossValue> {
    if pred.len() != gt.len() {
        return Err(GeomError::LengthMismatch {
            left: pred.len(),
            right: gt.len(),
        });
    }
    if pred.is_empty() {
        return Err(GeomError::EmptySet);
    }
    if !(beta > 0.0) {
        return Err(GeomError::InvalidValue("beta must be positive".into()));
    }
    let count = 3.0 * pred.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(3 * pred.len());
    for (p, g) in pred.iter().zip(gt) {
        for k in 0..3 {
            let d = p[k] - g[k];
            value += smooth_l1(d, beta);
            grad.push(smooth_l1_grad(d, beta) / count);
        }
    }
    Ok(LossValue::with_grad(value / count, grad))
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Supervised InfoNCE over unit-norm latents (rows of `latents`).
///
/// `s_ij = z_iᵀz_j / tau`; for every anchor with at least one positive,
/// `n_i = log Σ_{j ∈ P_i} exp(s_ij + log(w_ij + eps))` and
/// `d_i = log Σ_{j ≠ i} exp(s_ij)`. The loss is `−mean_i (n_i − d_i)`.
/// Gradient w.r.t. the latents, row-major.
pub fn info_nce(
    latents: &DMatrix<f64>,
    positive_mask: &DMatrix<bool>,
    weights: &DMatrix<f64>,
    tau: f64,
    eps: f64,
) -> Result<LossValue> {
    let n = latents.nrows();
    if n < 2 {
        return Err(GeomError::InsufficientPoints { needed: 2, got: n });
    }
    for (i, row) in latents.row_iter().enumerate() {
        if (row.norm() - 1.0).abs() > 1e-9 {
            return Err(GeomError::NotNormalized(i));
        }
    }
    info_nce_unchecked(latents, positive_mask, weights, tau, eps)
}

/// InfoNCE without the unit-norm precondition; the formula itself is
/// defined for any latents, which finite differencing relies on.
pub fn info_nce_unchecked(
    latents: &DMatrix<f64>,
    positive_mask: &DMatrix<bool>,
    weights: &DMatrix<f64>,
    tau: f64,
    eps: f64,
) -> Result<LossValue> {
    let n = latents.nrows();
    if positive_mask.shape() != (n, n) || weights.shape() != (n, n) {
        return Err(GeomError::DimensionMismatch(format!(
            "mask {:?} / weights {:?} for {n} latents",
            positive_mask.shape(),
            weights.shape()
        )));
    }
    if (0..n).any(|i| positive_mask[(i, i)]) {
        return Err(GeomError::InvalidValue("positive mask diagonal must be zero".into()));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(GeomError::InvalidValue("weights must be finite and >= 0".into()));
    }
    if !(tau > 0.0 && eps > 0.0) {
        return Err(GeomError::InvalidValue("tau and eps must be positive".into()));
    }
    let anchors: Vec<usize> = (0..n)
        .filter(|&i| (0..n).any(|j| positive_mask[(i, j)]))
        .collect();
    if anchors.is_empty() {
        return Err(GeomError::NoValidAnchors);
    }
    let s = latents * latents.transpose() / tau;
    let count = anchors.len() as f64;
    let mut value = 0.0;
    // dL/ds_ij
    let mut ds = DMatrix::<f64>::zeros(n, n);
    for &i in &anchors {
        let others = (0..n).filter(move |&j| j != i);
        let d_i = log_sum_exp(others.clone().map(|j| s[(i, j)]));
        let pos = (0..n).filter(|&j| positive_mask[(i, j)]);
        let num_logit = |j: usize| s[(i, j)] + (weights[(i, j)] + eps).ln();
        let n_i = log_sum_exp(pos.clone().map(num_logit));
        value -= n_i - d_i;
        for j in others {
            ds[(i, j)] += (s[(i, j)] - d_i).exp() / count;
        }
        for j in pos {
            ds[(i, j)] -= (num_logit(j) - n_i).exp() / count;
        }
    }
    let g = (&ds + ds.transpose()) * latents / tau;
    let grad = (0..n).flat_map(|i| g.row(i).iter().copied().collect::<Vec<_>>()).collect();
    Ok(LossValue::with_grad(value / count, grad))
}

/// Dense `height × width × channels` map, row-major with channels fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct MapTensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl MapTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(GeomError::DimensionMismatch(format!(
                "{} values for {height}×{width}×{channels}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    fn pixel(&self, v: usize, u: usize) -> &[f64] {
        let k = (v * self.width + u) * self.channels;
        &self.data[k..k + self.channels]
    }
}

/// Uncertainty-weighted map loss:
/// `Σ_p σ_p‖r_p‖₁ + Σ_p σ_p(‖Δ_u r_p‖₁ + ‖Δ_v r_p‖₁) − α Σ_p log σ_p`
/// over masked pixels, where `r = pred − gt` and `Δ` are forward
/// differences taken only when both pixels are masked. Gradient w.r.t.
/// `sigma`.
pub fn aleatoric_map_loss(
    pred: &MapTensor,
    gt: &MapTensor,
    sigma: &[f64],
    alpha: f64,
    mask: &[bool],
) -> Result<LossValue> {
    let (h, w) = (pred.height, pred.width);
    if gt.height != h || gt.width != w || gt.channels != pred.channels {
        return Err(GeomError::DimensionMismatch("pred and gt shapes differ".into()));
    }
    if sigma.len() != h * w || mask.len() != h * w {
        return Err(GeomError::DimensionMismatch(format!(
            "sigma {} / mask {} for {h}×{w} pixels",
            sigma.len(),
            mask.len()
        )));
    }
    if (0..h * w).any(|p| mask[p] && !(sigma[p] > 0.0)) {
        return Err(GeomError::NonPositiveSigma);
    }
    let residual = |v: usize, u: usize| -> Vec<f64> {
        pred.pixel(v, u)
            .iter()
            .zip(gt.pixel(v, u))
            .map(|(a, b)| a - b)
            .collect()
    };
    let l1_diff = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum() };
    let mut value = 0.0;
    let mut grad = vec![0.0; h * w];
    for v in 0..h {
        for u in 0..w {
            let p = v * w + u;
            if !mask[p] {
                continue;
            }
            let r = residual(v, u);
            let mut per_sigma: f64 = r.iter().map(|x| x.abs()).sum();
            if u + 1 < w && mask[p + 1] {
                per_sigma += l1_diff(&residual(v, u + 1), &r);
            }
            if v + 1 < h && mask[p + w] {
                per_sigma += l1_diff(&residual(v + 1, u), &r);
            }
            value += sigma[p] * per_sigma - alpha * sigma[p].ln();
            grad[p] = per_sigma - alpha / sigma[p];
        }
    }
    Ok(LossValue::with_grad(value, grad))
}

/// `‖t̂ − t‖₁ + ‖ŝ − s‖₁ + |log ŝ − log s*|`; gradient w.r.t.
/// `[pred_t (3), pred_s (3), pred_log_scale]`.
pub fn scale_loss(
    pred_t_abs: &Vec3,
    gt_t_abs: &Vec3,
    pred_s_abs: &Vec3,
    gt_s_abs: &Vec3,
    pred_log_scale: f64,
    gt_scale: f64,
) -> Result<LossValue> {
    if !(gt_scale > 0.0) {
        return Err(GeomError::NonPositiveScale);
    }
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(7);
    for (p, g) in pred_t_abs.iter().zip(gt_t_abs).chain(pred_s_abs.iter().zip(gt_s_abs)) {
        value += (p - g).abs();
        grad.push(sign0(p - g));
    }
    let d = pred_log_scale - gt_scale.ln();
    value += d.abs();
    grad.push(sign0(d));
    Ok(LossValue::with_grad(value, grad))
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `L_cd + L_div + L_rec` with unit weights: squared chamfer from keypoints
/// to the observed cloud, keypoint repulsion, and unsquared chamfer from the
/// reconstruction to the observed cloud.
pub fn keypoint_loss(keypoints: &[Vec3], reconstruction: &[Vec3], observed: &[Vec3], tau2: f64) -> Result<LossValue> {
    let cd = chamfer_one_sided(keypoints, observed, true)?;
    let div = diversity_loss(keypoints, tau2)?;
    let rec = chamfer_one_sided(reconstruction, observed, false)?;
    Ok(LossValue::value_only(cd.value + div.value + rec.value))
}

/// Weighted sum of named loss terms.
pub fn weighted_total(terms: &[(f64, f64)]) -> f64 {
    terms.iter().map(|(w, v)| w * v).sum()
}

/// Per-coordinate comparison of an analytic gradient against central
/// differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub numeric: Vec<f64>,
    pub rel_err: Vec<f64>,
    pub max_rel_err: f64,
    pub passed: bool,
}

/// Denominator floor for the relative error, so that coordinates whose
/// gradient is numerically zero compare absolutely.
pub const GRADCHECK_REL_FLOOR: f64 = 1e-8;

/// Central differences with step `eps` on every coordinate of `point`.
/// Relative error per coordinate is `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn finite_diff_check(
    f: impl Fn(&[f64]) -> f64,
    point: &[f64],
    analytic: &[f64],
    eps: f64,
    tol: f64,
) -> GradCheckReport {
    assert_eq!(point.len(), analytic.len(), "gradient length must match the point");
    let mut x = point.to_vec();
    let mut numeric = Vec::with_capacity(point.len());
    let mut rel_err = Vec::with_capacity(point.len());
    for k in 0..point.len() {
        let orig = x[k];
        x[k] = orig + eps;
        let fp = f(&x);
        x[k] = orig - eps;
        let fm = f(&x);
        x[k] = orig;
        let num = (fp - fm) / (2.0 * eps);
        let denom = analytic[k].abs().max(num.abs()).max(GRADCHECK_REL_FLOOR);
        numeric.push(num);
        rel_err.push((analytic[k] - num).abs() / denom);
    }
    let max_rel_err = rel_err.iter().copied().fold(0.0, f64::max);
    GradCheckReport {
        numeric,
        rel_err,
        max_rel_err,
        passed: max_rel_err < tol && max_rel_err.is_finite(),
    }
}
