//! Rotation representations and the SE(3) / Sim(3) / SA(3) transform algebra.
//!
//! SA(3) maps canonical object coordinates `c` into the camera frame as
//! `x = R · diag(scale) · c + t`. Sim(3) is the special case of a uniform
//! scale and SE(3) the special case of unit scale. SA(3) is only ever applied
//! or inverted here; it is not closed under composition.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

const ORTHO_TOL: f64 = 1e-9;
const SIXD_MIN_NORM: f64 = 1e-12;
/// Minimum angle between the two 6D seed columns, in radians.
const SIXD_MIN_ANGLE: f64 = 1e-6;

/// A proper rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 3]; 3]", into = "[[f64; 3]; 3]")]
pub struct Rotation3(Mat3);

impl Rotation3 {
    pub fn identity() -> Self {
        Self(Mat3::identity())
    }

    /// Validates orthonormality and `det = +1` to 1e-9.
    pub fn new(m: Mat3) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(GeomError::InvalidValue("non-finite rotation entry".into()));
        }
        let err = (m.transpose() * m - Mat3::identity()).norm();
        let det = m.determinant();
        if err > ORTHO_TOL || (det - 1.0).abs() > ORTHO_TOL {
            return Err(GeomError::InvalidValue(format!(
                "not a rotation (|RᵀR - I| = {err:e}, det = {det})"
            )));
        }
        Ok(Self(m))
    }

    /// Wraps a matrix the caller already knows to be a rotation.
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Self(m)
    }

    /// Right-handed rotation of `angle` radians about `axis`.
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 || angle == 0.0 {
            return Self::identity();
        }
        let k = axis / n;
        let kx = k.cross_matrix();
        Self(Mat3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos()))
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::from_axis_angle(&Vec3::x(), angle)
    }

    pub fn rot_y(angle: f64) -> Self {
        Self::from_axis_angle(&Vec3::y(), angle)
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::from_axis_angle(&Vec3::z(), angle)
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn compose(&self, other: &Rotation3) -> Self {
        Self(self.0 * other.0)
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// Geodesic distance to `other` in degrees, in `[0, 180]`.
    pub fn angle_to_deg(&self, other: &Rotation3) -> f64 {
        geodesic_angle_deg(self, other)
    }

    pub fn to_quaternion(&self) -> UnitQuaternion {
        UnitQuaternion::from_rotation(self)
    }

    pub fn to_6d(&self) -> SixDRotation {
        rot_to_6d(self)
    }
}

impl From<Rotation3> for [[f64; 3]; 3] {
    fn from(r: Rotation3) -> Self {
        let m = r.0;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }
}

impl TryFrom<[[f64; 3]; 3]> for Rotation3 {
    type Error = GeomError;

    fn try_from(rows: [[f64; 3]; 3]) -> Result<Self> {
        Rotation3::new(Mat3::from_fn(|i, j| rows[i][j]))
    }
}

/// Unit quaternion `(w, x, y, z)` with canonical sign.
///
/// The sign is fixed so that `w >= 0`, and when `w == 0` the first nonzero
/// of `x, y, z` is positive. `q` and `-q` therefore construct the same value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitQuaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl UnitQuaternion {
    pub fn identity() -> Self {
        Self {
            w: 1.0,
            x: 0.0,
            y: 0.0,
            z: 0.0,
        }
    }

    /// Normalizes and sign-canonicalizes the given components.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n < 1e-12 {
            return Err(GeomError::DegenerateInput("zero-norm quaternion".into()));
        }
        Ok(Self::canonical(w / n, x / n, y / n, z / n))
    }

    fn canonical(w: f64, x: f64, y: f64, z: f64) -> Self {
        let flip = if w != 0.0 {
            w < 0.0
        } else if x != 0.0 {
            x < 0.0
        } else if y != 0.0 {
            y < 0.0
        } else {
            z < 0.0
        };
        if flip {
            Self {
                w: -w,
                x: -x,
                y: -y,
                z: -z,
            }
        } else {
            Self { w, x, y, z }
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn dot(&self, other: &UnitQuaternion) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn to_rotation(&self) -> Rotation3 {
        quat_to_rot(self)
    }

    pub fn from_rotation(r: &Rotation3) -> Self {
        rot_to_quat(r)
    }
}

/// Quaternion to rotation matrix. The formula is quadratic in the
/// components, so `q` and `-q` give bit-identical matrices.
pub fn quat_to_rot(q: &UnitQuaternion) -> Rotation3 {
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    let m = Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    );
    Rotation3(m)
}

/// Rotation matrix to canonical unit quaternion (Shepperd's method).
pub fn rot_to_quat(r: &Rotation3) -> UnitQuaternion {
    let m = &r.0;
    let tr = m.trace();
    let (w, x, y, z);
    if tr > 0.0 {
        let s = (tr + 1.0).sqrt() * 2.0;
        w = 0.25 * s;
        x = (m[(2, 1)] - m[(1, 2)]) / s;
        y = (m[(0, 2)] - m[(2, 0)]) / s;
        z = (m[(1, 0)] - m[(0, 1)]) / s;
    } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
        let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
        w = (m[(2, 1)] - m[(1, 2)]) / s;
        x = 0.25 * s;
        y = (m[(0, 1)] + m[(1, 0)]) / s;
        z = (m[(0, 2)] + m[(2, 0)]) / s;
    } else if m[(1, 1)] > m[(2, 2)] {
        let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
        w = (m[(0, 2)] - m[(2, 0)]) / s;
        x = (m[(0, 1)] + m[(1, 0)]) / s;
        y = 0.25 * s;
        z = (m[(1, 2)] + m[(2, 1)]) / s;
    } else {
        let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
        w = (m[(1, 0)] - m[(0, 1)]) / s;
        x = (m[(0, 2)] + m[(2, 0)]) / s;
        y = (m[(1, 2)] + m[(2, 1)]) / s;
        z = 0.25 * s;
    }
    let n = (w * w + x * x + y * y + z * z).sqrt();
    UnitQuaternion::canonical(w / n, x / n, y / n, z / n)
}

/// Continuous 6D rotation parameterization: two unconstrained column seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SixDRotation {
    pub a: Vec3,
    pub b: Vec3,
}

/// Gram-Schmidt orthogonalization of a 6D seed into a rotation.
///
/// Seeds whose columns are shorter than 1e-12 or closer than 1e-6 rad to
/// parallel are rejected.
pub fn rot_from_6d(v: &SixDRotation) -> Result<Rotation3> {
    let (a, b) = (&v.a, &v.b);
    if !a.iter().chain(b.iter()).all(|x| x.is_finite()) {
        return Err(GeomError::DegenerateInput("non-finite 6D seed".into()));
    }
    let na = a.norm();
    let nb = b.norm();
    if na <= SIXD_MIN_NORM || nb <= SIXD_MIN_NORM {
        return Err(GeomError::DegenerateInput("zero-length 6D column".into()));
    }
    let sin = a.cross(b).norm() / (na * nb);
    if sin < SIXD_MIN_ANGLE.sin() {
        return Err(GeomError::DegenerateInput(
            "6D columns are (nearly) parallel".into(),
        ));
    }
    let c1 = a / na;
    let c2 = (b - c1 * c1.dot(b)).normalize();
    let c3 = c1.cross(&c2);
    Ok(Rotation3(Mat3::from_columns(&[c1, c2, c3])))
}

pub fn rot_to_6d(r: &Rotation3) -> SixDRotation {
    SixDRotation {
        a: r.0.column(0).into_owned(),
        b: r.0.column(1).into_owned(),
    }
}

/// Geodesic rotation distance `arccos((tr(aᵀb) - 1) / 2)` in degrees.
///
/// Evaluated as `atan2(sin θ, cos θ)` with `sin θ` taken from the
/// skew-symmetric part of `aᵀb`; plain `acos` cannot resolve angles below
/// about 1e-8 rad.
pub fn geodesic_angle_deg(a: &Rotation3, b: &Rotation3) -> f64 {
    let m = a.0.transpose() * b.0;
    let cos = (m.trace() - 1.0) / 2.0;
    let axis = Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    let sin = axis.norm() / 2.0;
    sin.atan2(cos).to_degrees()
}

/// Rigid transform (SE(3)): `x ↦ r·x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub r: Rotation3,
    pub t: Vec3,
}

impl RigidTransform {
    pub fn new(r: Rotation3, t: Vec3) -> Self {
        Self { r, t }
    }

    pub fn identity() -> Self {
        Self::new(Rotation3::identity(), Vec3::zeros())
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(Rotation3::identity(), t)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self {
            r: self.r.compose(&other.r),
            t: self.r.0 * other.t + self.t,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.r.inverse();
        Self {
            r: rt,
            t: -(rt.0 * self.t),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.r.0 * p + self.t
    }

    pub fn apply_all(&self, pts: &[Vec3]) -> Vec<Vec3> {
        pts.iter().map(|p| self.apply(p)).collect()
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut h = Matrix4::identity();
        h.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.r.0);
        h.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.t);
        h
    }
}

pub fn se3_compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.compose(b)
}

pub fn se3_inverse(a: &RigidTransform) -> RigidTransform {
    a.inverse()
}

/// Similarity transform (Sim(3)): `x ↦ s·r·x + t`, `s > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub s: f64,
    pub r: Rotation3,
    pub t: Vec3,
}

impl Similarity {
    pub fn new(s: f64, r: Rotation3, t: Vec3) -> Result<Self> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(GeomError::NonPositiveScale);
        }
        Ok(Self { s, r, t })
    }

    pub fn identity() -> Self {
        Self {
            s: 1.0,
            r: Rotation3::identity(),
            t: Vec3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.r.0 * p * self.s + self.t
    }

    pub fn apply_all(&self, pts: &[Vec3]) -> Vec<Vec3> {
        pts.iter().map(|p| self.apply(p)).collect()
    }

    pub fn rigid_part(&self) -> RigidTransform {
        RigidTransform::new(self.r, self.t)
    }
}

/// Anisotropic similarity (SA(3)): `c ↦ r·diag(scale)·c + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnisoSimilarity {
    pub r: Rotation3,
    pub scale: Vec3,
    pub t: Vec3,
}

impl AnisoSimilarity {
    pub fn new(r: Rotation3, scale: Vec3, t: Vec3) -> Result<Self> {
        if !scale.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return Err(GeomError::NonPositiveScale);
        }
        Ok(Self { r, scale, t })
    }

    pub fn identity() -> Self {
        Self {
            r: Rotation3::identity(),
            scale: Vec3::repeat(1.0),
            t: Vec3::zeros(),
        }
    }

    pub fn from_similarity(s: &Similarity) -> Self {
        Self {
            r: s.r,
            scale: Vec3::repeat(s.s),
            t: s.t,
        }
    }

    pub fn rigid_part(&self) -> RigidTransform {
        RigidTransform::new(self.r, self.t)
    }

    /// `r · diag(scale) · c + t`
    pub fn apply(&self, c: &Vec3) -> Vec3 {
        self.r.0 * self.scale.component_mul(c) + self.t
    }

    /// `diag(scale)⁻¹ · rᵀ · (x - t)`
    pub fn inverse_apply(&self, x: &Vec3) -> Vec3 {
        (self.r.0.transpose() * (x - self.t)).component_div(&self.scale)
    }

    /// Rigid motion applied after this map: `g ∘ self`.
    pub fn premul_rigid(&self, g: &RigidTransform) -> Self {
        Self {
            r: g.r.compose(&self.r),
            scale: self.scale,
            t: g.apply(&self.t),
        }
    }
}

pub fn sa3_apply(p: &AnisoSimilarity, pts: &[Vec3]) -> Vec<Vec3> {
    pts.iter().map(|c| p.apply(c)).collect()
}

pub fn sa3_inverse_apply(p: &AnisoSimilarity, pts: &[Vec3]) -> Vec<Vec3> {
    pts.iter().map(|x| p.inverse_apply(x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn assert_mat_close(a: &Mat3, b: &Mat3, tol: f64) {
        assert!((a - b).norm() < tol, "{a}\nvs\n{b}");
    }

    #[test]
    fn orthonormal_seed_gives_identity() {
        let r = rot_from_6d(&SixDRotation {
            a: Vec3::x(),
            b: Vec3::y(),
        })
        .unwrap();
        assert_mat_close(r.matrix(), &Mat3::identity(), 1e-15);
    }

    #[test]
    fn sheared_seed_is_orthogonalized() {
        let r = rot_from_6d(&SixDRotation {
            a: Vec3::new(2.0, 0.0, 0.0),
            b: Vec3::new(1.0, 1.0, 0.0),
        })
        .unwrap();
        assert_mat_close(r.matrix(), &Mat3::identity(), 1e-15);
    }

    #[test]
    fn degenerate_seeds_rejected() {
        let zero = SixDRotation {
            a: Vec3::zeros(),
            b: Vec3::y(),
        };
        assert!(matches!(rot_from_6d(&zero), Err(GeomError::DegenerateInput(_))));
        let parallel = SixDRotation {
            a: Vec3::x(),
            b: Vec3::new(3.0, 1e-9, 0.0),
        };
        assert!(matches!(
            rot_from_6d(&parallel),
            Err(GeomError::DegenerateInput(_))
        ));
    }

    #[test]
    fn to_6d_of_quarter_turn() {
        let v = rot_to_6d(&Rotation3::rot_z(FRAC_PI_2));
        assert!((v.a - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
        assert!((v.b - Vec3::new(-1.0, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn quaternion_basics() {
        let id = UnitQuaternion::identity().to_rotation();
        assert_eq!(*id.matrix(), Mat3::identity());
        let rx = UnitQuaternion::new(0.0, 1.0, 0.0, 0.0).unwrap().to_rotation();
        assert_eq!(*rx.matrix(), Mat3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0)));
        let q = UnitQuaternion::new(-0.5, 0.5, -0.5, 0.5).unwrap();
        assert!(q.w > 0.0);
        let q0 = UnitQuaternion::new(0.0, -1.0, 0.0, 0.0).unwrap();
        assert_eq!(q0.as_array(), [0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn sa3_apply_arithmetic() {
        let p = AnisoSimilarity::new(
            Rotation3::identity(),
            Vec3::repeat(2.0),
            Vec3::new(0.0, 0.0, 1.0),
        )
        .unwrap();
        let x = sa3_apply(&p, &[Vec3::new(0.1, 0.2, 0.3)]);
        assert!((x[0] - Vec3::new(0.2, 0.4, 1.6)).norm() < 1e-15);
        let c = sa3_inverse_apply(&p, &x);
        assert!((c[0] - Vec3::new(0.1, 0.2, 0.3)).norm() < 1e-15);
        let id = AnisoSimilarity::identity();
        assert_eq!(sa3_apply(&id, &[Vec3::new(0.5, 0.0, 0.0)])[0], Vec3::new(0.5, 0.0, 0.0));
    }

    #[test]
    fn nonpositive_scale_rejected() {
        let bad = AnisoSimilarity::new(Rotation3::identity(), Vec3::new(1.0, 0.0, 1.0), Vec3::zeros());
        assert_eq!(bad.unwrap_err(), GeomError::NonPositiveScale);
        assert!(Similarity::new(-1.0, Rotation3::identity(), Vec3::zeros()).is_err());
    }

    #[test]
    fn se3_identity_and_translations() {
        let x = RigidTransform::new(Rotation3::rot_y(0.3), Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(RigidTransform::identity().compose(&x), x);
        let a = RigidTransform::from_translation(Vec3::new(1.0, 0.0, 0.0));
        let b = RigidTransform::from_translation(Vec3::new(0.0, 2.0, -1.0));
        assert_eq!(a.compose(&b).t, Vec3::new(1.0, 2.0, -1.0));
    }

    #[test]
    fn geodesic_angle_examples() {
        let r = Rotation3::from_axis_angle(&Vec3::new(1.0, 2.0, 0.5), 1.1);
        assert_eq!(geodesic_angle_deg(&r, &r), 0.0);
        let r2 = r.compose(&Rotation3::rot_z(30f64.to_radians()));
        assert!((geodesic_angle_deg(&r, &r2) - 30.0).abs() < 1e-9);
        assert!((geodesic_angle_deg(&Rotation3::identity(), &Rotation3::rot_x(PI)) - 180.0).abs() < 1e-9);
    }

    #[test]
    fn rotation_validation() {
        assert!(Rotation3::new(Mat3::identity() * 1.01).is_err());
        assert!(Rotation3::new(Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0))).is_err());
        let json = serde_json::to_string(&Rotation3::rot_x(0.2)).unwrap();
        let back: Rotation3 = serde_json::from_str(&json).unwrap();
        assert_eq!(back, Rotation3::rot_x(0.2));
        assert!(serde_json::from_str::<Rotation3>("[[1,0,0],[0,1,0],[0,0,2]]").is_err());
    }
}
