mod common;

use common::*;
use nalgebra::{DMatrix, Matrix3, Matrix4};
use posegeom::alignment::{umeyama_se3, umeyama_sim3, WeightedCorrespondences};
use posegeom::camera::{backproject, fov_to_intrinsics, intrinsics_to_fov, CameraPoseEncoding, DepthMap};
use posegeom::harness::tensor::{TensorData, TensorFile};
use posegeom::keypoints::cosine_attention;
use posegeom::losses::{chamfer_one_sided, diversity_loss, info_nce, nocs_smooth_l1};
use posegeom::metrics::{auc, box_iou3d, vus, OrientedBox3, ThresholdGrid};
use posegeom::random::{uniform_rotation, unit_vector};
use posegeom::transforms::{
    geodesic_angle_deg, quat_to_rot, rot_from_6d, rot_to_6d, rot_to_quat, sa3_apply, sa3_inverse_apply, se3_compose,
    se3_inverse, AnisoSimilarity, Rotation3, SixDRotation, UnitQuaternion, Vec3,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        ..ProptestConfig::default()
    }
}

fn mat_diff(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    (a - b).abs().max()
}

proptest! {
    #![proptest_config(config(1000))]

    #[test]
    fn sixd_round_trip(seed: u64) {
        let r = uniform_rotation(&mut rng(seed));
        let back = rot_from_6d(&rot_to_6d(&r)).unwrap();
        prop_assert!(mat_diff(back.matrix(), r.matrix()) < 1e-12);
    }

    #[test]
    fn sixd_output_is_a_rotation(seed: u64, angle in 1e-5f64..std::f64::consts::PI) {
        let mut g = rng(seed);
        let a = unit_vector(&mut g) * g.random_range(0.1..10.0);
        // b at `angle` from a, with an arbitrary length
        let perp = a.cross(&unit_vector(&mut g)).normalize();
        let b = (a.normalize() * angle.cos() + perp * angle.sin()) * g.random_range(0.1..10.0);
        let m = *rot_from_6d(&SixDRotation { a, b }).unwrap().matrix();
        prop_assert!(mat_diff(&(m.transpose() * m), &Matrix3::identity()) < 1e-9);
        prop_assert!((m.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn quaternion_round_trip(w in -1.0f64..1.0, x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0) {
        prop_assume!((w * w + x * x + y * y + z * z).sqrt() > 1e-3);
        let q = UnitQuaternion::new(w, x, y, z).unwrap();
        let back = rot_to_quat(&quat_to_rot(&q));
        prop_assert!(max_abs_diff(&back.as_array(), &q.as_array()) < 1e-9);
        let neg = UnitQuaternion::new(-w, -x, -y, -z).unwrap();
        prop_assert_eq!(quat_to_rot(&neg), quat_to_rot(&q));
    }

    #[test]
    fn fov_round_trip(fx in 0.05f64..(std::f64::consts::PI - 0.05), fy in 0.05f64..(std::f64::consts::PI - 0.05),
                      w in 1usize..4000, h in 1usize..4000) {
        let enc = CameraPoseEncoding::new(UnitQuaternion::identity(), Vec3::zeros(), fx, fy).unwrap();
        let k = fov_to_intrinsics(&enc, w, h).unwrap();
        let (bx, by) = intrinsics_to_fov(&k);
        prop_assert!(((bx - fx) / fx).abs() < 1e-10);
        prop_assert!(((by - fy) / fy).abs() < 1e-10);
    }

    #[test]
    fn backproject_then_project_hits_pixel_centers(seed: u64, fov in 0.3f64..2.5) {
        let mut g = rng(seed);
        let (w, h) = (g.random_range(1..40), g.random_range(1..40));
        let enc = CameraPoseEncoding::new(UnitQuaternion::identity(), Vec3::zeros(), fov, fov).unwrap();
        let k = fov_to_intrinsics(&enc, w, h).unwrap();
        let values: Vec<f64> = (0..w * h)
            .map(|_| if g.random_bool(0.8) { g.random_range(0.01..50.0) } else { 0.0 })
            .collect();
        let d = DepthMap::new(w, h, values).unwrap();
        let pm = backproject(&d, &k).unwrap();
        for v in 0..h {
            for u in 0..w {
                let p = v * w + u;
                if d.is_valid(u, v) {
                    let px = k.project_point(&pm.points[p]).unwrap();
                    prop_assert!((px[0] - u as f64).abs() < 1e-6 && (px[1] - v as f64).abs() < 1e-6);
                } else {
                    prop_assert_eq!(pm.confidence[p], 0.0);
                }
            }
        }
    }

    #[test]
    fn tensor_file_round_trip(dims in prop::collection::vec(0usize..5, 0..4), dtype in 0u8..3, seed: u64) {
        let count: usize = dims.iter().product();
        let mut g = rng(seed);
        let data = match dtype {
            0 => TensorData::F32((0..count).map(|_| f32::from_bits(g.random())).collect()),
            1 => TensorData::F64((0..count).map(|_| f64::from_bits(g.random())).collect()),
            _ => TensorData::U8((0..count).map(|_| g.random()).collect()),
        };
        let t = TensorFile::new(dims.iter().map(|&d| d as u64).collect(), data).unwrap();
        let bytes = t.to_bytes();
        let back = TensorFile::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.shape(), t.shape());
        prop_assert_eq!(back.dtype(), t.dtype());
        // bytewise, so that NaN payloads count as equal
        prop_assert_eq!(back.to_bytes(), bytes);
    }
}

proptest! {
    #![proptest_config(config(256))]

    #[test]
    fn geodesic_matches_quaternion_angle(seed: u64) {
        let mut g = rng(seed);
        let (a, b) = (uniform_rotation(&mut g), uniform_rotation(&mut g));
        let want = quaternion_angle_deg(&rot_to_quat(&a), &rot_to_quat(&b));
        prop_assert!((geodesic_angle_deg(&a, &b) - want).abs() < 1e-6);
    }

    #[test]
    fn geodesic_triangle_inequality(seed: u64) {
        let mut g = rng(seed);
        let (a, b, c) = (uniform_rotation(&mut g), uniform_rotation(&mut g), uniform_rotation(&mut g));
        let ab = geodesic_angle_deg(&a, &b);
        let bc = geodesic_angle_deg(&b, &c);
        let ac = geodesic_angle_deg(&a, &c);
        prop_assert!(ac <= ab + bc + 1e-7);
    }

    #[test]
    fn se3_matches_homogeneous_matrices(seed: u64) {
        let mut g = rng(seed);
        let (a, b, c) = (rand_rigid(&mut g, 2.0), rand_rigid(&mut g, 2.0), rand_rigid(&mut g, 2.0));
        let ha = homogeneous(&a.r, &a.t);
        let hb = homogeneous(&b.r, &b.t);
        let ab = se3_compose(&a, &b);
        prop_assert!((homogeneous(&ab.r, &ab.t) - ha * hb).abs().max() < 1e-12);
        let inv = se3_inverse(&a);
        prop_assert!((homogeneous(&inv.r, &inv.t) * ha - Matrix4::identity()).abs().max() < 1e-10);
        let left = se3_compose(&se3_compose(&a, &b), &c);
        let right = se3_compose(&a, &se3_compose(&b, &c));
        prop_assert!(mat_diff(left.r.matrix(), right.r.matrix()) < 1e-10);
        prop_assert!((left.t - right.t).abs().max() < 1e-10);
    }

    #[test]
    fn sa3_inverse_undoes_apply(seed: u64) {
        let mut g = rng(seed);
        let scale = Vec3::new(g.random_range(0.01..3.0), g.random_range(0.01..3.0), g.random_range(0.01..3.0));
        let p = AnisoSimilarity::new(uniform_rotation(&mut g), scale, rand_vec3(&mut g, 2.0)).unwrap();
        let pts = rand_points(&mut g, 32, 0.5);
        let back = sa3_inverse_apply(&p, &sa3_apply(&p, &pts));
        for (a, b) in back.iter().zip(&pts) {
            prop_assert!((a - b).abs().max() < 1e-10);
        }
    }

    #[test]
    fn umeyama_is_equivariant(seed: u64) {
        let mut g = rng(seed);
        let n = g.random_range(4..64);
        let src = rand_points(&mut g, n, 0.5);
        let dst = rand_points(&mut g, n, 0.5);
        let gr = rand_rigid(&mut g, 1.0);
        let base = umeyama_sim3(&WeightedCorrespondences::uniform(src.clone(), dst.clone()).unwrap()).unwrap();
        let moved = umeyama_sim3(&WeightedCorrespondences::uniform(src, gr.apply_all(&dst)).unwrap()).unwrap();
        let want_r = gr.r.compose(&base.transform.r);
        let want_t = gr.apply(&base.transform.t);
        prop_assert!(mat_diff(moved.transform.r.matrix(), want_r.matrix()) < 1e-9);
        prop_assert!((moved.transform.t - want_t).abs().max() < 1e-9);
        prop_assert!((moved.transform.s - base.transform.s).abs() < 1e-9);
    }

    #[test]
    fn zero_weight_pairs_change_nothing(seed: u64) {
        let mut g = rng(seed);
        let n = g.random_range(4..64);
        let src = rand_points(&mut g, n, 0.5);
        let dst = rand_points(&mut g, n, 0.5);
        let w: Vec<f64> = (0..n).map(|_| g.random_range(0.1..2.0)).collect();
        let base = WeightedCorrespondences::new(src.clone(), dst.clone(), w.clone()).unwrap();
        let (mut s2, mut d2, mut w2) = (src, dst, w);
        for _ in 0..g.random_range(1..20) {
            let at = g.random_range(0..=s2.len());
            s2.insert(at, rand_vec3(&mut g, 5.0));
            d2.insert(at, rand_vec3(&mut g, 5.0));
            w2.insert(at, 0.0);
        }
        let padded = WeightedCorrespondences::new(s2, d2, w2).unwrap();
        let (a, b) = (umeyama_se3(&base).unwrap(), umeyama_se3(&padded).unwrap());
        prop_assert!(mat_diff(a.transform.r.matrix(), b.transform.r.matrix()) < 1e-12);
        prop_assert!((a.transform.t - b.transform.t).abs().max() < 1e-12);
    }

    #[test]
    fn box_iou_is_symmetric_and_rigid_invariant(seed: u64) {
        let mut g = rng(seed);
        let ext = |g: &mut rand_chacha::ChaCha8Rng| Vec3::new(g.random_range(0.2..1.5), g.random_range(0.2..1.5), g.random_range(0.2..1.5));
        let a = OrientedBox3::new(rand_rigid(&mut g, 0.4), ext(&mut g)).unwrap();
        let b = OrientedBox3::new(rand_rigid(&mut g, 0.4), ext(&mut g)).unwrap();
        let iou = box_iou3d(&a, &b);
        prop_assert!((0.0..=1.0).contains(&iou));
        prop_assert!((iou - box_iou3d(&b, &a)).abs() < 1e-9);
        let m = rand_rigid(&mut g, 3.0);
        let a2 = OrientedBox3::new(se3_compose(&m, &a.pose), a.extents).unwrap();
        let b2 = OrientedBox3::new(se3_compose(&m, &b.pose), b.extents).unwrap();
        prop_assert!((iou - box_iou3d(&a2, &b2)).abs() < 1e-9);
    }

    #[test]
    fn losses_ignore_point_order(seed: u64) {
        let mut g = rng(seed);
        let a = rand_points(&mut g, 12, 0.05);
        let b = rand_points(&mut g, 9, 0.05);
        let mut idx: Vec<usize> = (0..12).collect();
        idx.shuffle(&mut g);
        let pa: Vec<Vec3> = idx.iter().map(|&i| a[i]).collect();
        let mut pb = b.clone();
        pb.shuffle(&mut g);
        let c1 = chamfer_one_sided(&a, &b, true).unwrap().value;
        let c2 = chamfer_one_sided(&pa, &pb, true).unwrap().value;
        prop_assert!((c1 - c2).abs() < 1e-15);
        let d1 = diversity_loss(&a, 0.02).unwrap().value;
        let d2 = diversity_loss(&pa, 0.02).unwrap().value;
        prop_assert!((d1 - d2).abs() < 1e-15);
        let gt = rand_points(&mut g, 12, 0.05);
        let pgt: Vec<Vec3> = idx.iter().map(|&i| gt[i]).collect();
        let n1 = nocs_smooth_l1(&a, &gt, 0.1).unwrap().value;
        let n2 = nocs_smooth_l1(&pa, &pgt, 0.1).unwrap().value;
        prop_assert!((n1 - n2).abs() < 1e-15);
    }

    #[test]
    fn info_nce_depends_only_on_inner_products(seed: u64) {
        let mut g = rng(seed);
        let (n, d) = (6, 3);
        let z = rand_latents(&mut g, n, d);
        let pos: Vec<Vec<bool>> = (0..n).map(|i| (0..n).map(|j| i != j && (i + j) % 3 == 0).collect()).collect();
        let w: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| g.random_range(0.5..2.0)).collect()).collect();
        let q = uniform_rotation(&mut g);
        let zr: Vec<Vec<f64>> = z
            .iter()
            .map(|row| {
                let v = q.rotate(&Vec3::new(row[0], row[1], row[2]));
                vec![v.x, v.y, v.z]
            })
            .collect();
        let l1 = info_nce(&to_dmatrix(&z), &to_dmatrix(&pos), &to_dmatrix(&w), 0.5, 1e-8).unwrap().value;
        let l2 = info_nce(&to_dmatrix(&zr), &to_dmatrix(&pos), &to_dmatrix(&w), 0.5, 1e-8).unwrap().value;
        prop_assert!((l1 - l2).abs() < 1e-12);
    }

    #[test]
    fn attention_ignores_row_scale(seed: u64, lambda in 0.01f64..100.0) {
        let mut g = rng(seed);
        let q = DMatrix::from_fn(4, 5, |_, _| g.random_range(-1.0..1.0));
        let k = DMatrix::from_fn(7, 5, |_, _| g.random_range(-1.0..1.0));
        let h1 = cosine_attention(&q, &k, 1.0).unwrap();
        let h2 = cosine_attention(&(q * lambda), &(k * (1.0 / lambda)), 1.0).unwrap();
        prop_assert!((h1.matrix() - h2.matrix()).abs().max() < 1e-9);
        for row in h1.matrix().row_iter() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn accuracy_curves_never_rise_with_error(seed: u64) {
        let mut g = rng(seed);
        let n = g.random_range(1..20);
        let iou: Vec<f64> = (0..n).map(|_| g.random_range(0.0..1.0)).collect();
        let rot: Vec<f64> = (0..n).map(|_| g.random_range(0.0..20.0)).collect();
        let trans: Vec<f64> = (0..n).map(|_| g.random_range(0.0..0.06)).collect();
        let i = g.random_range(0..n);
        let (mut iou2, mut rot2, mut trans2) = (iou.clone(), rot.clone(), trans.clone());
        // a lower IoU is a worse result, larger pose errors likewise
        iou2[i] *= g.random_range(0.0..1.0);
        rot2[i] += g.random_range(0.0..5.0);
        trans2[i] += g.random_range(0.0..0.02);
        prop_assert!(auc(&iou2, &ThresholdGrid::IOU).unwrap() <= auc(&iou, &ThresholdGrid::IOU).unwrap());
        let v = |r: &[f64], t: &[f64]| vus(r, t, &ThresholdGrid::ROT_DEG, &ThresholdGrid::TRANS_CM).unwrap();
        prop_assert!(v(&rot2, &trans) <= v(&rot, &trans));
        prop_assert!(v(&rot, &trans2) <= v(&rot, &trans));
    }
}

#[test]
fn near_parallel_six_d_seed_is_rejected() {
    let a = Vec3::x();
    let b = Rotation3::rot_z(1e-8).rotate(&a);
    assert!(rot_from_6d(&SixDRotation { a, b }).is_err());
}
