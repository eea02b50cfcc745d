//! Serial-chain forward kinematics and the geometric Jacobian of a 7-DoF arm.
//!
//! The chain follows URDF semantics: joint `i` sits at a fixed `origin`
//! relative to the frame of joint `i-1` (after its rotation) and rotates about
//! `axis`, expressed in its own frame. The flange is the frame of the last
//! joint; the probe tip and camera hang off it at fixed offsets.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::se3::{exp_so3, log_so3, PoseSpec, RigidTransform};

pub const DOF: usize = 7;

pub type JointVector = SVector<f64, DOF>;
pub type Jacobian = SMatrix<f64, 6, DOF>;

const DEFAULT_LIMIT: f64 = 170.0 * std::f64::consts::PI / 180.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("chain must have exactly {DOF} revolute joints, got {0}")]
    WrongJointCount(usize),
    #[error("joint {0} axis is not unit length")]
    NonUnitAxis(usize),
    #[error("joint {0} has lower limit above upper limit")]
    InvalidLimits(usize),
    #[error("joint offset {0} is not a valid rigid transform")]
    InvalidOffset(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub origin: RigidTransform,
    pub axis: Vector3<f64>,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SerialChain {
    joints: Vec<Joint>,
    pub flange_to_probe: RigidTransform,
    pub flange_to_camera: RigidTransform,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JointState {
    pub q: JointVector,
    pub dq: JointVector,
}

impl JointState {
    pub fn at_rest(q: JointVector) -> Self {
        Self { q, dq: JointVector::zeros() }
    }
}

/// Per-joint frames for one configuration.
#[derive(Debug, Clone)]
pub struct ChainFrames {
    /// Frame of joint `i` after its rotation, in base coordinates.
    pub links: [RigidTransform; DOF],
    /// Joint axes in base coordinates.
    pub axes: [Vector3<f64>; DOF],
    /// Joint origins in base coordinates.
    pub origins: [Vector3<f64>; DOF],
}

impl ChainFrames {
    pub fn flange(&self) -> &RigidTransform {
        &self.links[DOF - 1]
    }

    /// Geometric Jacobian of a point attached to link `link` (columns past `link` are zero).
    pub fn point_jacobian(&self, link: usize, point: &Vector3<f64>) -> Jacobian {
        let mut j = Jacobian::zeros();
        for i in 0..=link {
            let a = self.axes[i];
            let lin = a.cross(&(point - self.origins[i]));
            j.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
            j.fixed_view_mut::<3, 1>(3, i).copy_from(&a);
        }
        j
    }
}

impl SerialChain {
    pub fn new(
        joints: Vec<Joint>,
        flange_to_probe: RigidTransform,
        flange_to_camera: RigidTransform,
    ) -> Result<Self, KinematicsError> {
        if joints.len() != DOF {
            return Err(KinematicsError::WrongJointCount(joints.len()));
        }
        for (i, j) in joints.iter().enumerate() {
            if (j.axis.norm() - 1.0).abs() > 1e-12 {
                return Err(KinematicsError::NonUnitAxis(i));
            }
            if j.lower > j.upper {
                return Err(KinematicsError::InvalidLimits(i));
            }
            if !j.origin.is_valid(1e-9) {
                return Err(KinematicsError::InvalidOffset(i));
            }
        }
        Ok(Self { joints, flange_to_probe, flange_to_camera })
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn within_limits(&self, q: &JointVector) -> bool {
        self.joints
            .iter()
            .zip(q.iter())
            .all(|(j, &v)| v >= j.lower && v <= j.upper)
    }

    pub fn frames(&self, q: &JointVector) -> ChainFrames {
        let mut links = [RigidTransform::identity(); DOF];
        let mut axes = [Vector3::zeros(); DOF];
        let mut origins = [Vector3::zeros(); DOF];
        let mut t = RigidTransform::identity();
        for (i, joint) in self.joints.iter().enumerate() {
            let pre = t.compose(&joint.origin);
            axes[i] = pre.rotation * joint.axis;
            origins[i] = pre.translation;
            t = pre.compose(&RigidTransform::from_rotation(exp_so3(&(joint.axis * q[i]))));
            links[i] = t;
        }
        ChainFrames { links, axes, origins }
    }

    pub fn flange_pose(&self, q: &JointVector) -> RigidTransform {
        *self.frames(q).flange()
    }

    /// Probe-tip pose `T_BP`.
    pub fn forward_kinematics(&self, q: &JointVector) -> RigidTransform {
        self.flange_pose(q).compose(&self.flange_to_probe)
    }

    /// Camera pose `T_BC`.
    pub fn camera_pose(&self, q: &JointVector) -> RigidTransform {
        self.flange_pose(q).compose(&self.flange_to_camera)
    }

    /// 6×7 geometric Jacobian of the probe tip: rows are (linear; angular) velocity in base coordinates.
    pub fn geometric_jacobian(&self, q: &JointVector) -> Jacobian {
        let frames = self.frames(q);
        let tip = frames.flange().compose(&self.flange_to_probe).translation;
        frames.point_jacobian(DOF - 1, &tip)
    }
}

/// Base-frame twist that takes `from` to `to` over unit time, to first order:
/// (translation difference, rotation vector of `R_to · R_fromᵀ`).
pub fn pose_difference(from: &RigidTransform, to: &RigidTransform) -> SVector<f64, 6> {
    let dp = to.translation - from.translation;
    let dw = log_so3(&(to.rotation * from.rotation.transpose()));
    SVector::<f64, 6>::new(dp.x, dp.y, dp.z, dw.x, dw.y, dw.z)
}

/// Applies a small base-frame twist (δp, δω) to a pose.
pub fn perturb_pose(pose: &RigidTransform, twist: &SVector<f64, 6>) -> RigidTransform {
    let dp = Vector3::new(twist[0], twist[1], twist[2]);
    let dw = Vector3::new(twist[3], twist[4], twist[5]);
    RigidTransform::new(exp_so3(&dw) * pose.rotation, pose.translation + dp)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct JointConfig {
    pub origin: PoseSpec,
    pub axis: [f64; 3],
    #[serde(default = "default_limits")]
    pub limits: [f64; 2],
}

fn default_limits() -> [f64; 2] {
    [-DEFAULT_LIMIT, DEFAULT_LIMIT]
}

/// Chain description as stored in the scene file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ChainConfig {
    pub joints: Vec<JointConfig>,
    pub flange_to_probe: PoseSpec,
    pub flange_to_camera: PoseSpec,
}

impl ChainConfig {
    pub fn build(&self) -> Result<SerialChain, KinematicsError> {
        let joints = self
            .joints
            .iter()
            .enumerate()
            .map(|(i, j)| {
                let axis = Vector3::from(j.axis);
                let n = axis.norm();
                if !(n > 0.0) || (n - 1.0).abs() > 1e-6 {
                    return Err(KinematicsError::NonUnitAxis(i));
                }
                Ok(Joint {
                    origin: j.origin.into(),
                    axis: axis / n,
                    lower: j.limits[0],
                    upper: j.limits[1],
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        SerialChain::new(joints, self.flange_to_probe.into(), self.flange_to_camera.into())
    }
}

impl Default for ChainConfig {
    /// A 7-DoF medical-arm-like layout (alternating roll/pitch axes,
    /// ~1.2 m reach) with a probe 0.17 m beyond the flange and a camera
    /// mounted beside it looking along the probe axis.
    fn default() -> Self {
        let z = [0.0, 0.0, 1.0];
        let y = [0.0, 1.0, 0.0];
        let ny = [0.0, -1.0, 0.0];
        let j = |xyz: [f64; 3], axis: [f64; 3]| JointConfig {
            origin: PoseSpec { xyz, rpy: [0.0; 3] },
            axis,
            limits: default_limits(),
        };
        ChainConfig {
            joints: vec![
                j([0.0, 0.0, 0.31], z),
                j([0.0, 0.0, 0.0], y),
                j([0.0, 0.0, 0.40], z),
                j([0.0, 0.0, 0.0], ny),
                j([0.0, 0.0, 0.39], z),
                j([0.0, 0.0, 0.0], y),
                j([0.0, 0.0, 0.08], z),
            ],
            flange_to_probe: PoseSpec { xyz: [0.0, 0.0, 0.17], rpy: [0.0, 0.0, std::f64::consts::PI] },
            flange_to_camera: PoseSpec { xyz: [0.07, 0.0, 0.04], rpy: [0.0, 0.0, std::f64::consts::FRAC_PI_2] },
        }
    }
}

/// Rotation about a joint axis; exposed for tests that rebuild the chain by hand.
pub fn joint_rotation(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    exp_so3(&(axis * angle))
}


#[cfg(test)]
mod tests {
    use super::testing::*;
    use super::*;
    use nalgebra::Matrix4;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn zero_q_pure_offset() {
        let chain = planar_chain([[0.0; 3]; DOF], [0.0, 0.0, 0.5]);
        let t = chain.forward_kinematics(&JointVector::zeros());
        assert_eq!(t.rotation, Matrix3::identity());
        assert!((t.translation - Vector3::new(0.0, 0.0, 0.5)).norm() < 1e-15);
    }

    #[test]
    fn planar_two_link() {
        let (l1, l2) = (0.4, 0.3);
        let mut origins = [[0.0; 3]; DOF];
        origins[1] = [l1, 0.0, 0.0];
        let chain = planar_chain(origins, [l2, 0.0, 0.0]);
        for (a, b) in [(FRAC_PI_2, 0.0), (0.3, -1.1), (-2.0, 0.7)] {
            let mut q = JointVector::zeros();
            q[0] = a;
            q[1] = b;
            let p = chain.forward_kinematics(&q).translation;
            let x = l1 * a.cos() + l2 * (a + b).cos();
            let y = l1 * a.sin() + l2 * (a + b).sin();
            assert!((p - Vector3::new(x, y, 0.0)).norm() < 1e-12, "{a} {b}");
        }
        let mut q = JointVector::zeros();
        q[0] = FRAC_PI_2;
        let p = chain.forward_kinematics(&q).translation;
        assert!((p - Vector3::new(0.0, l1 + l2, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn fk_matches_naive_homogeneous_chaining() {
        let chain = default_chain();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let q = random_q(&mut rng);
            let mut m = Matrix4::<f64>::identity();
            for (i, jc) in ChainConfig::default().joints.iter().enumerate() {
                let o = RigidTransform::from_xyz_rpy(jc.origin.xyz, jc.origin.rpy).to_homogeneous();
                let axis = Vector3::from(jc.axis);
                // Rodrigues written out independently of se3::exp_so3.
                let (s, c) = q[i].sin_cos();
                let k = Matrix3::new(0.0, -axis.z, axis.y, axis.z, 0.0, -axis.x, -axis.y, axis.x, 0.0);
                let r = Matrix3::identity() + s * k + (1.0 - c) * k * k;
                let mut rh = Matrix4::identity();
                rh.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
                m = m * o * rh;
            }
            let probe = m * chain.flange_to_probe.to_homogeneous();
            assert!((chain.forward_kinematics(&q).to_homogeneous() - probe).amax() < 1e-10);
        }
    }

    #[test]
    fn fk_consistency_with_inverse() {
        let chain = default_chain();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let t = chain.forward_kinematics(&random_q(&mut rng));
            let e = t.compose(&t.invert());
            assert!((e.to_homogeneous() - Matrix4::identity()).amax() < 1e-12);
        }
    }

    #[test]
    fn single_joint_column() {
        let r = 0.25;
        let chain = planar_chain([[0.0; 3]; DOF], [r, 0.0, 0.0]);
        let j = chain.geometric_jacobian(&JointVector::zeros());
        let col = j.column(0);
        let expected = [0.0, r, 0.0, 0.0, 0.0, 1.0];
        for k in 0..6 {
            assert!((col[k] - expected[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let chain = default_chain();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = 1e-6;
        for _ in 0..100 {
            let q = random_q(&mut rng);
            let j = chain.geometric_jacobian(&q);
            for i in 0..DOF {
                let mut qp = q;
                let mut qm = q;
                qp[i] += h;
                qm[i] -= h;
                let tp = chain.forward_kinematics(&qp);
                let tm = chain.forward_kinematics(&qm);
                let lin = (tp.translation - tm.translation) / (2.0 * h);
                let ang = log_so3(&(tp.rotation * tm.rotation.transpose())) / (2.0 * h);
                assert!((lin - j.fixed_view::<3, 1>(0, i)).norm() < 1e-5);
                assert!((ang - j.fixed_view::<3, 1>(3, i)).norm() < 1e-5);
            }
        }
    }

    #[test]
    fn angular_rows_are_axes_at_zero() {
        let chain = default_chain();
        let j = chain.geometric_jacobian(&JointVector::zeros());
        // With identity offsets rotations the base-frame axes equal the local axes.
        for (i, jc) in ChainConfig::default().joints.iter().enumerate() {
            let a = Vector3::from(jc.axis);
            assert!((j.fixed_view::<3, 1>(3, i) - a).norm() < 1e-15);
        }
    }

    #[test]
    fn rejects_wrong_joint_count() {
        let mut cfg = ChainConfig::default();
        cfg.joints.pop();
        assert_eq!(cfg.build(), Err(KinematicsError::WrongJointCount(6)));
    }

    #[test]
    fn limits_default_to_170_degrees() {
        let chain = default_chain();
        let mut q = JointVector::zeros();
        assert!(chain.within_limits(&q));
        q[3] = 3.0;
        assert!(!chain.within_limits(&q));
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = ChainConfig::default();
        let s = serde_json::to_string(&cfg).unwrap();
        let back: ChainConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(cfg, back);
    }
}
