//! Forward math of keypoint-centric attention: cosine cross-attention
//! heatmaps, convex keypoint/feature aggregation, FiLM conditioning and
//! multi-view latent pooling.

use nalgebra::{DMatrix, DVector};

use crate::error::{GeomError, Result};
use crate::transforms::Vec3;

pub const DEFAULT_TEMPERATURE: f64 = 1.0;
const MIN_ROW_NORM: f64 = 1e-12;

/// Per-point descriptors `f` (K×D) and their camera-frame positions.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub f: DMatrix<f64>,
    pub pts: Vec<Vec3>,
}

impl FeatureSet {
    pub fn new(f: DMatrix<f64>, pts: Vec<Vec3>) -> Result<Self> {
        if f.nrows() != pts.len() {
            return Err(GeomError::DimensionMismatch(format!(
                "{} feature rows vs {} points",
                f.nrows(),
                pts.len()
            )));
        }
        if pts.is_empty() {
            return Err(GeomError::EmptySet);
        }
        Ok(Self { f, pts })
    }
}

/// Row-stochastic M×K attention matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap(DMatrix<f64>);

impl Heatmap {
    /// Validates non-negativity and unit row sums (1e-9).
    pub fn new(h: DMatrix<f64>) -> Result<Self> {
        if h.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(GeomError::InvalidValue("heatmap entries must be >= 0".into()));
        }
        for (i, row) in h.row_iter().enumerate() {
            if (row.sum() - 1.0).abs() > 1e-9 {
                return Err(GeomError::InvalidValue(format!("heatmap row {i} does not sum to 1")));
            }
        }
        Ok(Self(h))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn num_keypoints(&self) -> usize {
        self.0.nrows()
    }

    pub fn num_points(&self) -> usize {
        self.0.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet {
    pub x: Vec<Vec3>,
    pub feat: DMatrix<f64>,
}

/// Unit-norm pooled object embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectLatent(DVector<f64>);

impl ObjectLatent {
    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.0
    }
}

fn normalized_rows(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut out = m.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        let n = row.norm();
        if !(n > MIN_ROW_NORM) {
            return Err(GeomError::ZeroNormRow(i));
        }
        row /= n;
    }
    Ok(out)
}

/// `h[m, k] = softmax_k(cos(q_m, f_k) / temperature)`.
pub fn cosine_attention(queries: &DMatrix<f64>, keys: &DMatrix<f64>, temperature: f64) -> Result<Heatmap> {
    if queries.ncols() != keys.ncols() {
        return Err(GeomError::DimensionMismatch(format!(
            "query dim {} vs key dim {}",
            queries.ncols(),
            keys.ncols()
        )));
    }
    if !(temperature > 0.0) {
        return Err(GeomError::InvalidValue("temperature must be positive".into()));
    }
    if keys.nrows() == 0 {
        return Err(GeomError::EmptySet);
    }
    let q = normalized_rows(queries)?;
    let k = normalized_rows(keys)?;
    let mut h = &q * k.transpose() / temperature;
    for mut row in h.row_iter_mut() {
        let max = row.max();
        row.apply(|v| *v = (*v - max).exp());
        let s = row.sum();
        row /= s;
    }
    Ok(Heatmap(h))
}

/// Keypoints and keypoint features as heatmap-weighted convex combinations.
pub fn aggregate(h: &Heatmap, fs: &FeatureSet) -> Result<KeypointSet> {
    if h.num_points() != fs.pts.len() {
        return Err(GeomError::DimensionMismatch(format!(
            "heatmap has {} columns for {} points",
            h.num_points(),
            fs.pts.len()
        )));
    }
    let x = h
        .0
        .row_iter()
        .map(|row| {
            row.iter()
                .zip(&fs.pts)
                .fold(Vec3::zeros(), |acc, (w, p)| acc + p * *w)
        })
        .collect();
    Ok(KeypointSet {
        x,
        feat: &h.0 * &fs.f,
    })
}

/// Feature-wise affine modulation `gamma ⊙ row + beta`.
pub fn film(features: &DMatrix<f64>, gamma: &[f64], beta: &[f64]) -> Result<DMatrix<f64>> {
    let d = features.ncols();
    if gamma.len() != d || beta.len() != d {
        return Err(GeomError::DimensionMismatch(format!(
            "feature dim {d}, gamma {}, beta {}",
            gamma.len(),
            beta.len()
        )));
    }
    Ok(DMatrix::from_fn(features.nrows(), d, |i, j| {
        gamma[j] * features[(i, j)] + beta[j]
    }))
}

/// Mean of the per-frame latents, renormalized to unit length.
pub fn pool_latent(per_frame: &DMatrix<f64>) -> Result<ObjectLatent> {
    if per_frame.nrows() == 0 {
        return Err(GeomError::EmptyInput);
    }
    if per_frame.iter().any(|v| !v.is_finite()) {
        return Err(GeomError::InvalidValue("non-finite latent".into()));
    }
    let mean: DVector<f64> = per_frame.row_mean().transpose();
    let n = mean.norm();
    if !(n > MIN_ROW_NORM) {
        return Err(GeomError::ZeroNormRow(0));
    }
    Ok(ObjectLatent(mean / n))
}
