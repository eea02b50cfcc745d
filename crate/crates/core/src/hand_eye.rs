//! Hand-eye calibration from paired relative motions (AX = XB).
//!
//! `A_i` are relative flange motions, `B_i` the matching relative camera
//! motions, and `X` the flange-to-camera transform. Rotation is solved first
//! as a homogeneous quaternion least-squares problem, then translation from
//! the stacked linear system `(R_A − I) t_X = R_X t_B − t_A`.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Quaternion, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::se3::{log_so3, skew, RigidTransform};

/// Rotations smaller than this carry no usable axis information.
const MIN_ROTATION: f64 = 1e-9;
const PARALLEL_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HandEyeError {
    #[error("need at least 3 motion pairs, got {0}")]
    TooFewMotions(usize),
    #[error("all rotation axes are parallel; translation along the axis is unobservable")]
    DegenerateMotions,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionPair {
    pub a: RigidTransform,
    pub b: RigidTransform,
}

// (w, x, y, z) ordering.
fn quat_wxyz(r: &Matrix3<f64>) -> nalgebra::Vector4<f64> {
    let q = RigidTransform::from_rotation(*r).quaternion();
    let mut v = nalgebra::Vector4::new(q.w, q.i, q.j, q.k);
    if v[0] < 0.0 {
        v = -v;
    }
    v
}

fn left_mul(p: &nalgebra::Vector4<f64>) -> Matrix4<f64> {
    let w = p[0];
    let v = Vector3::new(p[1], p[2], p[3]);
    let mut m = Matrix4::zeros();
    m[(0, 0)] = w;
    m.fixed_view_mut::<1, 3>(0, 1).copy_from(&(-v.transpose()));
    m.fixed_view_mut::<3, 1>(1, 0).copy_from(&v);
    m.fixed_view_mut::<3, 3>(1, 1)
        .copy_from(&(Matrix3::identity() * w + skew(&v)));
    m
}

fn right_mul(p: &nalgebra::Vector4<f64>) -> Matrix4<f64> {
    let w = p[0];
    let v = Vector3::new(p[1], p[2], p[3]);
    let mut m = Matrix4::zeros();
    m[(0, 0)] = w;
    m.fixed_view_mut::<1, 3>(0, 1).copy_from(&(-v.transpose()));
    m.fixed_view_mut::<3, 1>(1, 0).copy_from(&v);
    m.fixed_view_mut::<3, 3>(1, 1)
        .copy_from(&(Matrix3::identity() * w - skew(&v)));
    m
}

fn check_axes(pairs: &[MotionPair]) -> Result<(), HandEyeError> {
    let axes: Vec<Vector3<f64>> = pairs
        .iter()
        .filter_map(|p| {
            let w = log_so3(&p.a.rotation);
            (w.norm() > MIN_ROTATION).then(|| w.normalize())
        })
        .collect();
    let spread = axes
        .iter()
        .enumerate()
        .flat_map(|(i, a)| axes[i + 1..].iter().map(move |b| a.cross(b).norm()))
        .fold(0.0_f64, f64::max);
    if spread < PARALLEL_TOL {
        return Err(HandEyeError::DegenerateMotions);
    }
    Ok(())
}

/// Solves `A_i · X = X · B_i` for `X`.
pub fn solve_hand_eye(pairs: &[MotionPair]) -> Result<RigidTransform, HandEyeError> {
    if pairs.len() < 3 {
        return Err(HandEyeError::TooFewMotions(pairs.len()));
    }
    check_axes(pairs)?;

    let n = pairs.len();
    let mut m = DMatrix::<f64>::zeros(4 * n, 4);
    for (i, p) in pairs.iter().enumerate() {
        let qa = quat_wxyz(&p.a.rotation);
        let qb = quat_wxyz(&p.b.rotation);
        m.view_mut((4 * i, 0), (4, 4))
            .copy_from(&(left_mul(&qa) - right_mul(&qb)));
    }
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let (k, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
    let qx = v_t.row(k);
    let rotation = *UnitQuaternion::from_quaternion(Quaternion::new(qx[0], qx[1], qx[2], qx[3]))
        .to_rotation_matrix()
        .matrix();

    let mut c = DMatrix::<f64>::zeros(3 * n, 3);
    let mut d = DVector::<f64>::zeros(3 * n);
    for (i, p) in pairs.iter().enumerate() {
        c.view_mut((3 * i, 0), (3, 3))
            .copy_from(&(p.a.rotation - Matrix3::identity()));
        d.rows_mut(3 * i, 3)
            .copy_from(&(rotation * p.b.translation - p.a.translation));
    }
    let translation = c
        .svd(true, true)
        .solve(&d, 1e-14)
        .expect("SVD computed with U and V");

    Ok(RigidTransform::new(
        rotation,
        Vector3::new(translation[0], translation[1], translation[2]),
    ))
}

/// Sum of squared Frobenius residuals ‖A X − X B‖² over all pairs.
pub fn residual(pairs: &[MotionPair], x: &RigidTransform) -> f64 {
    pairs
        .iter()
        .map(|p| {
            let l = p.a.compose(x).to_homogeneous();
            let r = x.compose(&p.b).to_homogeneous();
            (l - r).norm_squared()
        })
        .sum()
}
