//! Surface-specific coordinates ρ = (s₁, s₂, d, ε) of a probe relative to a charted mesh.
//!
//! * `(s₁, s₂)` – chart coordinates of the closest surface point (foot point).
//! * `d` – signed probe-tip distance, positive outside the tissue.
//! * `ε` – twice the vector part of the rotation error between the probe and
//!   the target frame whose z-axis is the inward normal and whose x-axis
//!   follows the chart's s₁ direction.
//!
//! The Cartesian→surface Jacobian is defined by central finite differences of
//! ρ under base-frame twists, evaluated with the foot point held on the face,
//! edge or vertex that is closest at the linearisation point.

use nalgebra::{Matrix3, SMatrix, UnitQuaternion, Vector2, Vector3, Vector6};
use thiserror::Error;

use crate::chart::SurfaceChart;
use crate::kinematics::{perturb_pose, Jacobian, JointVector, SerialChain};
use crate::mesh::{Feature, SurfacePoint};
use crate::se3::RigidTransform;

pub const H_LINEAR: f64 = 1e-6;
pub const H_ANGULAR: f64 = 1e-6;
/// How far the tip may overhang the mesh boundary (m) before ρ is undefined.
pub const BOUNDARY_OVERHANG: f64 = 1e-3;
/// uv-triangles with smaller signed area count as singular.
pub const MIN_UV_AREA: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurfaceError {
    #[error("probe foot point lies beyond the mesh boundary ({overhang:.4} m overhang)")]
    OutsideDomain { overhang: f64 },
    #[error("uv triangle {0} under the foot point is flipped or degenerate")]
    NearSingularChart(usize),
}

/// ρ as a structured value.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SurfacePose {
    pub s: Vector2<f64>,
    pub d: f64,
    pub eps: Vector3<f64>,
}

impl SurfacePose {
    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(self.s.x, self.s.y, self.d, self.eps.x, self.eps.y, self.eps.z)
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            s: Vector2::new(v[0], v[1]),
            d: v[2],
            eps: Vector3::new(v[3], v[4], v[5]),
        }
    }
}

/// ρ together with the geometry it was computed from.
#[derive(Debug, Clone, Copy)]
pub struct SurfaceSample {
    pub pose: SurfacePose,
    pub foot: SurfacePoint,
    /// Target probe orientation: z = −normal, x = chart s₁ direction.
    pub target: Matrix3<f64>,
}

/// Rotation whose z-axis is the inward normal and whose x-axis follows s₁.
pub fn target_frame(chart: &SurfaceChart, foot: &SurfacePoint) -> Matrix3<f64> {
    let n = foot.normal;
    let z = -n;
    let mut t = chart.tangent_at(foot.face, &foot.bary);
    t -= n * t.dot(&n);
    if t.norm() < 1e-12 {
        let jac = chart.face_jacobian(foot.face);
        t = jac.column(0).into_owned();
        t -= n * t.dot(&n);
    }
    let x = t.normalize();
    let y = z.cross(&x);
    Matrix3::from_columns(&[x, y, z])
}

/// Orientation error: 2·vec(q_target⁻¹ q_probe), scalar part kept non-negative.
pub fn orientation_error(target: &Matrix3<f64>, probe: &Matrix3<f64>) -> Vector3<f64> {
    let qt = RigidTransform::from_rotation(*target).quaternion();
    let qp = RigidTransform::from_rotation(*probe).quaternion();
    let qe = qt.inverse() * qp;
    let q = qe.quaternion();
    let sign = if q.w < 0.0 { -1.0 } else { 1.0 };
    Vector3::new(q.i, q.j, q.k) * (2.0 * sign)
}

fn boundary_overhang(chart: &SurfaceChart, foot: &SurfacePoint, p: &Vector3<f64>) -> f64 {
    let mesh = chart.mesh();
    let on_boundary = match foot.feature {
        Feature::Interior => false,
        Feature::Edge(a, b) => mesh.is_boundary_edge(a, b),
        Feature::Vertex(v) => mesh.is_boundary_vertex(v),
    };
    if !on_boundary {
        return 0.0;
    }
    let off = p - foot.foot;
    let n = mesh.face_normal(foot.face);
    (off - n * off.dot(&n)).norm()
}

pub fn surface_sample(chart: &SurfaceChart, probe: &RigidTransform) -> Result<SurfaceSample, SurfaceError> {
    let p = probe.translation;
    let foot = chart.mesh().closest_point(&p);
    let overhang = boundary_overhang(chart, &foot, &p);
    if overhang > BOUNDARY_OVERHANG {
        return Err(SurfaceError::OutsideDomain { overhang });
    }
    let target = target_frame(chart, &foot);
    let pose = SurfacePose {
        s: chart.uv_at(foot.face, &foot.bary),
        d: foot.distance,
        eps: orientation_error(&target, &probe.rotation),
    };
    Ok(SurfaceSample { pose, foot, target })
}

/// ρ for a probe pose expressed in the chart's frame.
pub fn surface_pose(chart: &SurfaceChart, probe: &RigidTransform) -> Result<SurfacePose, SurfaceError> {
    surface_sample(chart, probe).map(|s| s.pose)
}

/// The probe pose with coordinates ρ = (s, d, ε = 0): tip `d` along the
/// normal above the surface point at `s`, axis along the inward normal.
pub fn aligned_probe_pose(chart: &SurfaceChart, s: &Vector2<f64>, d: f64) -> Option<RigidTransform> {
    let cp = chart.chart_to_surface(s).ok()?;
    let foot = chart.mesh().closest_point(&cp.point);
    let target = target_frame(chart, &SurfacePoint { face: cp.face, bary: cp.bary, ..foot });
    Some(RigidTransform::new(target, cp.point + cp.normal * d))
}

/// Foot of `p` on the closest-point branch of `reference`: the plane of its
/// face, the line of its edge, or its vertex. Barycentric weights may leave
/// [0, 1] so that ρ extends smoothly past the face.
fn branch_point(chart: &SurfaceChart, reference: &SurfacePoint, p: &Vector3<f64>) -> SurfacePoint {
    let mesh = chart.mesh();
    let face = mesh.faces()[reference.face];
    let [a, b, c] = face.map(|i| mesh.vertices()[i]);
    let slot = |v: usize| face.iter().position(|&w| w == v).expect("feature vertex belongs to its face");
    let (foot, bary) = match reference.feature {
        Feature::Interior => {
            let n = mesh.face_normal(reference.face);
            let foot = p - n * n.dot(&(p - a));
            let (e0, e1, e2) = (b - a, c - a, foot - a);
            let (d00, d01, d11) = (e0.dot(&e0), e0.dot(&e1), e1.dot(&e1));
            let (d20, d21) = (e2.dot(&e0), e2.dot(&e1));
            let den = d00 * d11 - d01 * d01;
            let wb = (d11 * d20 - d01 * d21) / den;
            let wc = (d00 * d21 - d01 * d20) / den;
            (foot, Vector3::new(1.0 - wb - wc, wb, wc))
        }
        Feature::Edge(u, v) => {
            let (pu, pv) = (mesh.vertices()[u], mesh.vertices()[v]);
            let e = pv - pu;
            let t = (p - pu).dot(&e) / e.norm_squared();
            let mut bary = Vector3::zeros();
            bary[slot(u)] = 1.0 - t;
            bary[slot(v)] = t;
            (pu + e * t, bary)
        }
        Feature::Vertex(v) => {
            let mut bary = Vector3::zeros();
            bary[slot(v)] = 1.0;
            (mesh.vertices()[v], bary)
        }
    };
    let normal = mesh.interpolate_normal(reference.face, &bary);
    let offset = p - foot;
    let distance = if offset.dot(&normal) < 0.0 { -offset.norm() } else { offset.norm() };
    SurfacePoint { foot, bary, normal, distance, ..*reference }
}

fn branch_pose(chart: &SurfaceChart, reference: &SurfacePoint, probe: &RigidTransform) -> Vector6<f64> {
    let foot = branch_point(chart, reference, &probe.translation);
    SurfacePose {
        s: chart.uv_at(foot.face, &foot.bary),
        d: foot.distance,
        eps: orientation_error(&target_frame(chart, &foot), &probe.rotation),
    }
    .to_vector()
}

/// J_ρx: 6×6 derivative of ρ with respect to a base-frame twist (v, ω) of the probe.
pub fn cartesian_jacobian(chart: &SurfaceChart, probe: &RigidTransform) -> Result<SMatrix<f64, 6, 6>, SurfaceError> {
    let centre = surface_sample(chart, probe)?;
    if chart.uv_signed_area(centre.foot.face) <= MIN_UV_AREA {
        return Err(SurfaceError::NearSingularChart(centre.foot.face));
    }
    let mut j = SMatrix::<f64, 6, 6>::zeros();
    for k in 0..6 {
        let h = if k < 3 { H_LINEAR } else { H_ANGULAR };
        let mut tw = Vector6::zeros();
        tw[k] = h;
        let plus = branch_pose(chart, &centre.foot, &perturb_pose(probe, &tw));
        let minus = branch_pose(chart, &centre.foot, &perturb_pose(probe, &(-tw)));
        j.set_column(k, &((plus - minus) / (2.0 * h)));
    }
    Ok(j)
}

/// J_ρ = J_ρx · J_x (6×7), mapping joint velocities to ρ̇.
pub fn task_jacobian(chart: &SurfaceChart, chain: &SerialChain, q: &JointVector) -> Result<Jacobian, SurfaceError> {
    let probe = chain.forward_kinematics(q);
    Ok(cartesian_jacobian(chart, &probe)? * chain.geometric_jacobian(q))
}

/// Convenience: ρ at a joint configuration.
pub fn surface_pose_at(chart: &SurfaceChart, chain: &SerialChain, q: &JointVector) -> Result<SurfacePose, SurfaceError> {
    surface_pose(chart, &chain.forward_kinematics(q))
}

/// Rotation by `angle` about `axis`.
pub fn rotation_about(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    *UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(*axis), angle)
        .to_rotation_matrix()
        .matrix()
}
