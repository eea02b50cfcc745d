//! Rigid transforms in SE(3) and a few SO(3) helpers.

use nalgebra::{Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

/// A homogeneous transform `T_XY`: pose of frame Y expressed in frame X.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn from_rotation(rotation: Matrix3<f64>) -> Self {
        Self {
            rotation,
            translation: Vector3::zeros(),
        }
    }

    /// Rotation of `angle` radians about `axis` (need not be normalised).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        Self::from_rotation(exp_so3(&(axis.normalize() * angle)))
    }

    /// URDF-style roll/pitch/yaw (fixed-axis X, then Y, then Z).
    pub fn from_xyz_rpy(xyz: [f64; 3], rpy: [f64; 3]) -> Self {
        let r = Rotation3::from_euler_angles(rpy[0], rpy[1], rpy[2]);
        Self::new(*r.matrix(), Vector3::from(xyz))
    }

    pub fn rpy(&self) -> [f64; 3] {
        let (r, p, y) = Rotation3::from_matrix_unchecked(self.rotation).euler_angles();
        [r, p, y]
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self::new(*q.to_rotation_matrix().matrix(), translation)
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation))
    }

    /// `self · other`
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn invert(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `T⁻¹ · p` without forming the inverse.
    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Reads the rotation/translation blocks; the bottom row is not checked.
    pub fn from_homogeneous(m: &Matrix4<f64>) -> Self {
        Self {
            rotation: m.fixed_view::<3, 3>(0, 0).into_owned(),
            translation: m.fixed_view::<3, 1>(0, 3).into_owned(),
        }
    }

    /// Deviation of the rotation block from SO(3): max of ‖RᵀR − I‖∞ and |det R − 1|.
    pub fn orthonormality_error(&self) -> f64 {
        let e = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        e.max((self.rotation.determinant() - 1.0).abs())
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.translation.iter().all(|v| v.is_finite()) && self.orthonormality_error() <= tol
    }

    /// Frobenius distance of the 4×4 homogeneous matrices.
    pub fn distance_frobenius(&self, other: &RigidTransform) -> f64 {
        (self.to_homogeneous() - other.to_homogeneous()).norm()
    }

    /// Geodesic angle between the two rotations (rad).
    pub fn rotation_angle_to(&self, other: &RigidTransform) -> f64 {
        log_so3(&(self.rotation.transpose() * other.rotation)).norm()
    }

    /// Re-orthonormalise the rotation block (nearest rotation via SVD).
    pub fn orthonormalized(&self) -> RigidTransform {
        RigidTransform::new(project_to_so3(&self.rotation), self.translation)
    }
}

impl std::ops::Mul for RigidTransform {
    type Output = RigidTransform;
    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        self.compose(&rhs)
    }
}

impl std::ops::Mul<&RigidTransform> for &RigidTransform {
    type Output = RigidTransform;
    fn mul(self, rhs: &RigidTransform) -> RigidTransform {
        self.compose(rhs)
    }
}

/// Free-function form of [`RigidTransform::compose`].
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.compose(b)
}

/// Free-function form of [`RigidTransform::invert`].
pub fn invert(t: &RigidTransform) -> RigidTransform {
    t.invert()
}

/// Probe-to-object transform from the base-frame chain: `T_PO = T_BP⁻¹ · T_BC · T_CO`.
pub fn probe_to_object(
    base_to_probe: &RigidTransform,
    base_to_camera: &RigidTransform,
    camera_to_object: &RigidTransform,
) -> RigidTransform {
    base_to_probe
        .invert()
        .compose(base_to_camera)
        .compose(camera_to_object)
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues' formula.
pub fn exp_so3(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let k = skew(w);
    if theta < 1e-8 {
        return Matrix3::identity() + k + 0.5 * k * k;
    }
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / (theta * theta);
    Matrix3::identity() + a * k + b * k * k
}

/// Rotation vector of `r` (axis · angle, angle in [0, π]).
pub fn log_so3(r: &Matrix3<f64>) -> Vector3<f64> {
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r)).scaled_axis()
}

/// Nearest rotation matrix in the Frobenius sense.
pub fn project_to_so3(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * vt
}

/// Serialized transform: translation in metres, URDF roll/pitch/yaw in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSpec {
    #[serde(default)]
    pub xyz: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
}

impl Default for PoseSpec {
    fn default() -> Self {
        Self { xyz: [0.0; 3], rpy: [0.0; 3] }
    }
}

impl From<PoseSpec> for RigidTransform {
    fn from(p: PoseSpec) -> Self {
        RigidTransform::from_xyz_rpy(p.xyz, p.rpy)
    }
}

impl From<&RigidTransform> for PoseSpec {
    fn from(t: &RigidTransform) -> Self {
        PoseSpec {
            xyz: [t.translation.x, t.translation.y, t.translation.z],
            rpy: t.rpy(),
        }
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use rand::Rng;

    pub fn random_transform<R: Rng>(rng: &mut R) -> RigidTransform {
        let w = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ) * rng.random_range(0.0..3.0);
        let t = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        RigidTransform::new(exp_so3(&w), t)
    }
}
