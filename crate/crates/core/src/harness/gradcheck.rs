//! Central-difference verification of every analytic loss gradient at
//! seeded, tie-free points (no nearest-neighbor ties, hinge, Huber or L1
//! kinks within reach of the finite-difference step).

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::GradcheckConfig;
use crate::camera::camera_loss_flat;
use crate::losses::{
    aleatoric_map_loss, chamfer_one_sided, diversity_loss, finite_diff_check, flatten, info_nce_unchecked,
    nocs_smooth_l1, pose_loss_flat, scale_loss, unflatten, LossConfig, MapTensor,
};
use crate::random::{gaussian_vec3, rng_for, uniform_rotation, Stream};
use crate::transforms::{UnitQuaternion, Vec3};

type ScalarFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type GradFn = Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// One loss under test: its value and analytic gradient as functions of
/// the flat argument, and the points to check at.
pub struct GradCase {
    pub name: &'static str,
    pub value: ScalarFn,
    pub grad: GradFn,
    pub points: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossCheck {
    pub name: String,
    pub points: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckSummary {
    pub eps: f64,
    pub tol: f64,
    pub losses: Vec<LossCheck>,
    pub passed: bool,
}

/// Minimal margin to any non-smooth point of a loss.
const KINK_MARGIN: f64 = 1e-3;

fn sample_until<T>(rng: &mut ChaCha8Rng, mut draw: impl FnMut(&mut ChaCha8Rng) -> Option<T>) -> T {
    loop {
        if let Some(v) = draw(rng) {
            return v;
        }
    }
}

fn uniform_pts(rng: &mut ChaCha8Rng, n: usize, half: f64) -> Vec<Vec3> {
    (0..n)
        .map(|_| Vec3::from_fn(|_, _| rng.random_range(-half..half)))
        .collect()
}

/// Nearest and second-nearest distances from `p` to `b`.
fn two_nearest(p: &Vec3, b: &[Vec3]) -> (f64, f64) {
    let mut d: Vec<f64> = b.iter().map(|q| (p - q).norm()).collect();
    d.sort_by(f64::total_cmp);
    (d[0], d.get(1).copied().unwrap_or(f64::INFINITY))
}

fn chamfer_case(name: &'static str, squared: bool, rng: &mut ChaCha8Rng, count: usize) -> GradCase {
    let b = uniform_pts(rng, 8, 0.5);
    let points = (0..count)
        .map(|_| {
            sample_until(rng, |rng| {
                let a = uniform_pts(rng, 5, 0.6);
                a.iter()
                    .all(|p| {
                        let (d1, d2) = two_nearest(p, &b);
                        d1 > KINK_MARGIN && d2 - d1 > KINK_MARGIN
                    })
                    .then(|| flatten(&a))
            })
        })
        .collect();
    let b2 = b.clone();
    GradCase {
        name,
        value: Box::new(move |x| chamfer_one_sided(&unflatten(x), &b, squared).unwrap().value),
        grad: Box::new(move |x| chamfer_one_sided(&unflatten(x), &b2, squared).unwrap().grad.unwrap()),
        points,
    }
}

fn diversity_case(tau2: f64, rng: &mut ChaCha8Rng, count: usize) -> GradCase {
    let margin = (tau2 * 0.05).min(KINK_MARGIN);
    let points = (0..count)
        .map(|_| {
            sample_until(rng, |rng| {
                // a cluster about twice the repulsion radius, so that some
                // pairs are active and some are not
                let a = uniform_pts(rng, 6, tau2);
                let ok = (0..a.len()).all(|i| {
                    ((i + 1)..a.len()).all(|j| {
                        let d = (a[i] - a[j]).norm();
                        d > margin && (d - tau2).abs() > margin
                    })
                });
                ok.then(|| flatten(&a))
            })
        })
        .collect();
    GradCase {
        name: "diversity",
        value: Box::new(move |x| diversity_loss(&unflatten(x), tau2).unwrap().value),
        grad: Box::new(move |x| diversity_loss(&unflatten(x), tau2).unwrap().grad.unwrap()),
        points,
    }
}

fn pose_case(rng: &mut ChaCha8Rng, count: usize) -> GradCase {
    let r = uniform_rotation(rng);
    let m = r.matrix();
    let mut gt: Vec<f64> = (0..3).flat_map(|i| (0..3).map(move |j| m[(i, j)])).collect();
    gt.extend((0..3).map(|_| rng.random_range(-0.5..0.5)));
    gt.extend((0..3).map(|_| rng.random_range(0.05..0.4)));
    let points = (0..count)
        .map(|_| gt.iter().map(|g| g + rng.random_range(-0.2..0.2)).collect())
        .collect();
    let gt2 = gt.clone();
    GradCase {
        name: "pose",
        value: Box::new(move |x| pose_loss_flat(x, &gt).0),
        grad: Box::new(move |x| pose_loss_flat(x, &gt2).1),
        points,
    }
}

fn smooth_l1_case(beta: f64, rng: &mut ChaCha8Rng, count: usize) -> GradCase {
    let gt = uniform_pts(rng, 6, 0.5);
    let points = (0..count)
        .map(|_| {
            sample_until(rng, |rng| {
                let pred: Vec<Vec3> = gt.iter().map(|g| g + gaussian_vec3(rng, 1.5 * beta)).collect();
                let ok = pred
                    .iter()
                    .zip(&gt)
                    .all(|(p, g)| (p - g).iter().all(|d| (d.abs() - beta).abs() > KINK_MARGIN * beta));
                ok.then(|| flatten(&pred))
            })
        })
        .collect();
    let gt2 = gt.clone();
    GradCase {
        name: "nocs_smooth_l1",
        value: Box::new(move |x| nocs_smooth_l1(&unflatten(x), &gt, beta).unwrap().value),
        grad: Box::new(move |x| nocs_smooth_l1(&unflatten(x), &gt2, beta).unwrap().grad.unwrap()),
        points,
    }
}

fn info_nce_case(tau: f64, eps: f64, rng: &mut ChaCha8Rng, count: usize) -> GradCase {
    let (n, d) = (6, 4);
    let labels = [0, 0, 1, 1, 1, 2];
    let mask = DMatrix::from_fn(n, n, |i, j| i != j && labels[i] == labels[j]);
    let weights = DMatrix::from_fn(n, n, |_, _| rng.random_range(0.5..1.5));
    let points = (0..count)
        .map(|_| {
            let mut z = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
            for mut row in z.row_iter_mut() {
                let norm = row.norm();
                row /= norm;
            }
            (0..n).flat_map(|i| z.row(i).iter().copied().collect::<Vec<_>>()).collect()
        })
        .collect();
    let (mask2, weights2) = (mask.clone(), weights.clone());
    GradCase {
        name: "info_nce",
        value: Box::new(move |x| {
            info_nce_unchecked(&DMatrix::from_row_slice(n, d, x), &mask, &weights, tau, eps)
                .unwrap()
                .value
        }),
        grad: Box::new(move |x| {
            info_nce_unchecked(&DMatrix::from_row_slice(n, d, x), &mask2, &weights2, tau, eps)
                .unwrap()
                .grad
                .unwrap()
        }),
        points,
    }
}

fn aleatoric_case(alpha: f64, rng: &mut ChaCha8Rng, count: usize) -> GradCase {
    let (h, w, c) = (3, 4, 3);
    let pred = MapTensor::new(h, w, c, (0..h * w * c).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap();
    let gt = MapTensor::new(h, w, c, (0..h * w * c).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap();
    let mask: Vec<bool> = (0..h * w).map(|p| p == 0 || rng.random_bool(0.8)).collect();
    let points = (0..count)
        .map(|_| (0..h * w).map(|_| rng.random_range(0.3..2.0)).collect())
        .collect();
    let (pred2, gt2, mask2) = (pred.clone(), gt.clone(), mask.clone());
    GradCase {
        name: "aleatoric_sigma",
        value: Box::new(move |x| aleatoric_map_loss(&pred, &gt, x, alpha, &mask).unwrap().value),
        grad: Box::new(move |x| aleatoric_map_loss(&pred2, &gt2, x, alpha, &mask2).unwrap().grad.unwrap()),
        points,
    }
}

fn scale_case(rng: &mut ChaCha8Rng, count: usize) -> GradCase {
    let gt_t = Vec3::from_fn(|_, _| rng.random_range(-0.5..0.5));
    let gt_s = Vec3::from_fn(|_, _| rng.random_range(0.05..0.4));
    let gt_scale: f64 = rng.random_range(0.1..2.0);
    let gt: Vec<f64> = gt_t.iter().chain(gt_s.iter()).copied().chain([gt_scale.ln()]).collect();
    let points = (0..count)
        .map(|_| {
            sample_until(rng, |rng| {
                let x: Vec<f64> = gt.iter().map(|g| g + rng.random_range(-0.1..0.1)).collect();
                x.iter().zip(&gt).all(|(a, b)| (a - b).abs() > KINK_MARGIN).then_some(x)
            })
        })
        .collect();
    let eval = move |x: &[f64]| {
        scale_loss(
            &Vec3::new(x[0], x[1], x[2]),
            &gt_t,
            &Vec3::new(x[3], x[4], x[5]),
            &gt_s,
            x[6],
            gt_scale,
        )
        .unwrap()
    };
    let eval2 = eval;
    GradCase {
        name: "scale",
        value: Box::new(move |x| eval(x).value),
        grad: Box::new(move |x| eval2(x).grad.unwrap()),
        points,
    }
}

fn camera_case(delta: f64, rng: &mut ChaCha8Rng, count: usize) -> GradCase {
    let q = UnitQuaternion::from_rotation(&uniform_rotation(rng));
    let mut gt: Vec<f64> = q.as_array().to_vec();
    gt.extend((0..3).map(|_| rng.random_range(-1.0..1.0)));
    gt.extend((0..2).map(|_| rng.random_range(0.6..1.6)));
    let points = (0..count)
        .map(|_| {
            sample_until(rng, |rng| {
                let x: Vec<f64> = gt.iter().map(|g| g + rng.random_range(-2.0 * delta..2.0 * delta)).collect();
                let dot: f64 = (0..4).map(|i| x[i] * gt[i]).sum();
                let sign = if dot < 0.0 { -1.0 } else { 1.0 };
                let ok = dot.abs() > KINK_MARGIN
                    && (0..9).all(|i| {
                        let r = if i < 4 { sign * x[i] } else { x[i] } - gt[i];
                        (r.abs() - delta).abs() > KINK_MARGIN * delta
                    });
                ok.then_some(x)
            })
        })
        .collect();
    let gt2 = gt.clone();
    GradCase {
        name: "camera",
        value: Box::new(move |x| camera_loss_flat(x, &gt, delta).0),
        grad: Box::new(move |x| camera_loss_flat(x, &gt2, delta).1.to_vec()),
        points,
    }
}

/// Every loss with an analytic gradient, each exactly once.
pub fn default_cases(losses: &LossConfig, cfg: &GradcheckConfig, seed: u64) -> Vec<GradCase> {
    let mut rng = rng_for(seed, Stream::Gradcheck);
    let n = cfg.points_per_loss;
    vec![
        chamfer_case("chamfer_squared", true, &mut rng, n),
        chamfer_case("chamfer", false, &mut rng, n),
        diversity_case(losses.tau2, &mut rng, n),
        pose_case(&mut rng, n),
        smooth_l1_case(losses.sl1_beta, &mut rng, n),
        info_nce_case(losses.tau_infonce, losses.eps, &mut rng, n),
        aleatoric_case(losses.alpha, &mut rng, n),
        scale_case(&mut rng, n),
        camera_case(losses.huber_delta, &mut rng, n),
    ]
}

pub fn check_cases(cases: &[GradCase], cfg: &GradcheckConfig) -> GradcheckSummary {
    let losses: Vec<LossCheck> = cases
        .iter()
        .map(|c| {
            let max_rel_err = c
                .points
                .iter()
                .map(|x| finite_diff_check(&c.value, x, &(c.grad)(x), cfg.eps, cfg.tol).max_rel_err)
                .fold(0.0, |a: f64, b| if b.is_nan() { f64::INFINITY } else { a.max(b) });
            LossCheck {
                name: c.name.to_string(),
                points: c.points.len(),
                max_rel_err,
                passed: max_rel_err < cfg.tol,
            }
        })
        .collect();
    GradcheckSummary {
        eps: cfg.eps,
        tol: cfg.tol,
        passed: losses.iter().all(|l| l.passed),
        losses,
    }
}
