//! Reference implementations written straight from the definitions, with
//! plain loops and no shared code with the library, plus seeded instance
//! generators used by several test targets.

#![allow(dead_code, clippy::needless_range_loop)]

use nalgebra::{DMatrix, Matrix4};
use posegeom::metrics::OrientedBox3;
use posegeom::random::{rng_for, uniform_rotation, Stream};
use posegeom::transforms::{RigidTransform, Rotation3, UnitQuaternion, Vec3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub fn rng(seed: u64) -> ChaCha8Rng {
    rng_for(seed, Stream::Test)
}

pub fn rand_vec3(rng: &mut impl Rng, half_width: f64) -> Vec3 {
    Vec3::new(
        rng.random_range(-half_width..half_width),
        rng.random_range(-half_width..half_width),
        rng.random_range(-half_width..half_width),
    )
}

pub fn rand_points(rng: &mut impl Rng, n: usize, half_width: f64) -> Vec<Vec3> {
    (0..n).map(|_| rand_vec3(rng, half_width)).collect()
}

pub fn rand_rigid(rng: &mut impl Rng, t_half_width: f64) -> RigidTransform {
    RigidTransform::new(uniform_rotation(rng), rand_vec3(rng, t_half_width))
}

fn dist(a: &Vec3, b: &Vec3) -> f64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2)).sqrt()
}

// ---------------------------------------------------------------- losses

pub fn chamfer_oracle(a: &[Vec3], b: &[Vec3], squared: bool) -> f64 {
    let mut total = 0.0;
    for p in a {
        let mut best = f64::INFINITY;
        for q in b {
            let d = dist(p, q);
            let d = if squared { d * d } else { d };
            if d < best {
                best = d;
            }
        }
        total += best;
    }
    total / a.len() as f64
}

pub fn diversity_oracle(k: &[Vec3], tau2: f64) -> f64 {
    let m = k.len();
    let mut total = 0.0;
    for x in 0..m {
        for y in 0..m {
            if x != y {
                let gap = tau2 - dist(&k[x], &k[y]);
                if gap > 0.0 {
                    total += gap * gap;
                }
            }
        }
    }
    total / (m * (m - 1)) as f64
}

/// `‖R_gt − R‖_F + ‖t_gt − t‖₂ + ‖s_gt − s‖₂` with each norm spelled out.
pub fn pose_oracle(
    r: &[[f64; 3]; 3],
    t: &[f64; 3],
    s: &[f64; 3],
    r_gt: &[[f64; 3]; 3],
    t_gt: &[f64; 3],
    s_gt: &[f64; 3],
) -> f64 {
    let mut fro = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            fro += (r_gt[i][j] - r[i][j]).powi(2);
        }
    }
    let mut dt = 0.0;
    let mut ds = 0.0;
    for i in 0..3 {
        dt += (t_gt[i] - t[i]).powi(2);
        ds += (s_gt[i] - s[i]).powi(2);
    }
    fro.sqrt() + dt.sqrt() + ds.sqrt()
}

pub fn smooth_l1_oracle(pred: &[Vec3], gt: &[Vec3], beta: f64) -> f64 {
    let mut total = 0.0;
    let mut count = 0;
    for i in 0..pred.len() {
        for c in 0..3 {
            let x = (pred[i][c] - gt[i][c]).abs();
            total += if x < beta { 0.5 * x * x / beta } else { x - 0.5 * beta };
            count += 1;
        }
    }
    total / count as f64
}

/// Supervised InfoNCE evaluated with bare `exp`/`ln`, no max shift.
pub fn info_nce_oracle(z: &[Vec<f64>], pos: &[Vec<bool>], w: &[Vec<f64>], tau: f64, eps: f64) -> Option<f64> {
    let n = z.len();
    let sim = |i: usize, j: usize| -> f64 {
        let mut d = 0.0;
        for k in 0..z[i].len() {
            d += z[i][k] * z[j][k];
        }
        d / tau
    };
    let mut total = 0.0;
    let mut anchors = 0;
    for i in 0..n {
        if !(0..n).any(|j| pos[i][j]) {
            continue;
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..n {
            if j == i {
                continue;
            }
            if pos[i][j] {
                num += (sim(i, j) + (w[i][j] + eps).ln()).exp();
            }
            den += sim(i, j).exp();
        }
        total += num.ln() - den.ln();
        anchors += 1;
    }
    (anchors > 0).then(|| -total / anchors as f64)
}

/// Aleatoric map loss on an `h × w × c` row-major map (channels fastest):
/// per masked pixel `σ·|r|₁ + σ·(|r(u+1) − r|₁ + |r(v+1) − r|₁) − α log σ`,
/// a difference term counted only when its neighbor is also masked.
#[allow(clippy::too_many_arguments)]
pub fn aleatoric_oracle(
    h: usize,
    w: usize,
    c: usize,
    pred: &[f64],
    gt: &[f64],
    sigma: &[f64],
    alpha: f64,
    mask: &[bool],
) -> f64 {
    let r = |v: usize, u: usize, k: usize| pred[(v * w + u) * c + k] - gt[(v * w + u) * c + k];
    let mut total = 0.0;
    for v in 0..h {
        for u in 0..w {
            if !mask[v * w + u] {
                continue;
            }
            let s = sigma[v * w + u];
            for k in 0..c {
                total += s * r(v, u, k).abs();
            }
            if u + 1 < w && mask[v * w + u + 1] {
                for k in 0..c {
                    total += s * (r(v, u + 1, k) - r(v, u, k)).abs();
                }
            }
            if v + 1 < h && mask[(v + 1) * w + u] {
                for k in 0..c {
                    total += s * (r(v + 1, u, k) - r(v, u, k)).abs();
                }
            }
            total -= alpha * s.ln();
        }
    }
    total
}

pub fn scale_oracle(t: &[f64; 3], t_gt: &[f64; 3], s: &[f64; 3], s_gt: &[f64; 3], log_scale: f64, scale_gt: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..3 {
        total += (t[i] - t_gt[i]).abs();
        total += (s[i] - s_gt[i]).abs();
    }
    total + (log_scale - scale_gt.ln()).abs()
}

/// Unit-norm rows of a random `n × d` matrix.
pub fn rand_latents(rng: &mut impl Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let row: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            row.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

pub fn to_dmatrix<T: Clone + PartialEq + std::fmt::Debug + 'static>(rows: &[Vec<T>]) -> DMatrix<T> {
    DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j].clone())
}

// --------------------------------------------------------------- metrics

/// Monte-Carlo IoU: uniform samples in the smaller box tested against the
/// other box's face planes.
pub fn box_iou_monte_carlo(a: &OrientedBox3, b: &OrientedBox3, samples: usize, seed: u64) -> f64 {
    let (small, other) = if a.volume() <= b.volume() { (a, b) } else { (b, a) };
    let chunk = 50_000;
    let chunks = samples.div_ceil(chunk);
    let hits: usize = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_for(seed.wrapping_mul(1_000_003).wrapping_add(c as u64), Stream::Test);
            let n = chunk.min(samples - c * chunk);
            let mut hits = 0;
            for _ in 0..n {
                let local = Vec3::new(
                    (rng.random::<f64>() - 0.5) * small.extents.x,
                    (rng.random::<f64>() - 0.5) * small.extents.y,
                    (rng.random::<f64>() - 0.5) * small.extents.z,
                );
                let p = small.pose.apply(&local);
                let q = other.pose.r.matrix().transpose() * (p - other.pose.t);
                if (0..3).all(|k| q[k].abs() <= 0.5 * other.extents[k]) {
                    hits += 1;
                }
            }
            hits
        })
        .sum();
    let inter = small.volume() * hits as f64 / samples as f64;
    inter / (a.volume() + b.volume() - inter)
}

pub fn adds_oracle(pred_pts: &[Vec3], gt_pts: &[Vec3]) -> f64 {
    let mut total = 0.0;
    for p in pred_pts {
        let mut best = f64::INFINITY;
        for g in gt_pts {
            best = best.min(dist(p, g));
        }
        total += best;
    }
    total / pred_pts.len() as f64
}

pub fn add_oracle(pred_pts: &[Vec3], gt_pts: &[Vec3]) -> f64 {
    let mut total = 0.0;
    for (p, g) in pred_pts.iter().zip(gt_pts) {
        total += dist(p, g);
    }
    total / pred_pts.len() as f64
}

/// IoU thresholds 0.25, 0.30, …, 0.95 written out.
pub const IOU_GRID: [f64; 15] = [
    0.25, 0.30, 0.35, 0.40, 0.45, 0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95,
];

pub fn auc_oracle(values: &[f64]) -> f64 {
    let mut total = 0.0;
    for t in IOU_GRID {
        let mut hits = 0;
        for v in values {
            if *v >= t {
                hits += 1;
            }
        }
        total += hits as f64 / values.len() as f64;
    }
    total / IOU_GRID.len() as f64
}

/// Joint accuracy averaged over integer degrees 1..=15 and centimeters 1..=5.
pub fn vus_oracle(rot_deg: &[f64], trans_m: &[f64]) -> f64 {
    let mut total = 0.0;
    for d in 1..=15 {
        for c in 1..=5 {
            let mut hits = 0;
            for i in 0..rot_deg.len() {
                if rot_deg[i] <= d as f64 && trans_m[i] <= c as f64 / 100.0 {
                    hits += 1;
                }
            }
            total += hits as f64 / rot_deg.len() as f64;
        }
    }
    total / 75.0
}

// ------------------------------------------------------------ transforms

pub fn homogeneous(r: &Rotation3, t: &Vec3) -> Matrix4<f64> {
    let m = r.matrix();
    Matrix4::new(
        m[(0, 0)], m[(0, 1)], m[(0, 2)], t.x,
        m[(1, 0)], m[(1, 1)], m[(1, 2)], t.y,
        m[(2, 0)], m[(2, 1)], m[(2, 2)], t.z,
        0.0, 0.0, 0.0, 1.0,
    )
}

/// Rotation angle between two unit quaternions, degrees.
pub fn quaternion_angle_deg(a: &UnitQuaternion, b: &UnitQuaternion) -> f64 {
    let d = (a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z).abs().min(1.0);
    2.0 * d.acos().to_degrees()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
