//! Marker-based plane localisation, camera view planning, synthetic depth
//! capture and heightmap reconstruction of the exposed surface.

mod depth;
mod reconstruct;

pub use depth::{capture_depth, read_depth_image, write_depth_image, DepthImage, Intrinsics, Surface};
pub use reconstruct::{object_frame, reconstruct_mesh, ReconstructedSurface, ReconstructionParams};

use nalgebra::{Matrix3, Matrix3x4, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::se3::RigidTransform;

pub const DEFAULT_VIEW_ANGLE: f64 = std::f64::consts::FRAC_PI_4;
pub const DEFAULT_VIEW_DISTANCE: f64 = 0.30;
pub const DEFAULT_VIEWS: usize = 8;
/// Minimum ratio between the in-plane spread and the out-of-plane residual.
pub const PLANARITY_RATIO: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("expected 4 marker observations, got {0}")]
    WrongMarkerCount(usize),
    #[error("marker id {0} observed twice")]
    DuplicateMarker(u32),
    #[error("marker centres are collinear or not planar enough to define a plane")]
    DegenerateMarkers,
    #[error("need at least {needed} captures, got {got}")]
    TooFewCaptures { needed: usize, got: usize },
    #[error("{empty:.1}% of heightmap cells received no samples")]
    InsufficientCoverage { empty: f64 },
    #[error("invalid depth image: {0}")]
    InvalidImage(String),
    #[error("I/O error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkerObservation {
    pub marker_id: u32,
    /// Marker centre in the camera frame (m).
    pub center_cam: Vector3<f64>,
    /// Position noise level (m).
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenePlane {
    pub center: Vector3<f64>,
    pub normal: Vector3<f64>,
}

impl ScenePlane {
    pub fn new(center: Vector3<f64>, normal: Vector3<f64>) -> Self {
        Self { center, normal: normal.normalize() }
    }

    pub fn transformed(&self, t: &RigidTransform) -> Self {
        Self { center: t.transform_point(&self.center), normal: t.transform_vector(&self.normal) }
    }

    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        (p - self.center).dot(&self.normal)
    }
}

/// Least-squares plane through four marker centres, normal facing the camera.
pub fn fit_plane(observations: &[MarkerObservation]) -> Result<ScenePlane, SceneError> {
    if observations.len() != 4 {
        return Err(SceneError::WrongMarkerCount(observations.len()));
    }
    let mut obs = observations.to_vec();
    obs.sort_by_key(|o| o.marker_id);
    if let Some(w) = obs.windows(2).find(|w| w[0].marker_id == w[1].marker_id) {
        return Err(SceneError::DuplicateMarker(w[0].marker_id));
    }
    let center = obs.iter().map(|o| o.center_cam).sum::<Vector3<f64>>() / 4.0;
    let mut centred = Matrix3x4::zeros();
    for (k, o) in obs.iter().enumerate() {
        centred.set_column(k, &(o.center_cam - center));
    }
    let svd = (centred * centred.transpose()).symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| svd.eigenvalues[b].total_cmp(&svd.eigenvalues[a]));
    let sv = order.map(|i| svd.eigenvalues[i].max(0.0).sqrt());
    if sv[0] <= 0.0 || sv[1] < 0.1 * sv[0] || sv[1] < PLANARITY_RATIO * sv[2] {
        return Err(SceneError::DegenerateMarkers);
    }
    let mut normal: Vector3<f64> = svd.eigenvectors.column(order[2]).normalize();
    let facing = normal.dot(&-center);
    if facing < 0.0 || (facing == 0.0 && normal.z > 0.0) {
        normal = -normal;
    }
    Ok(ScenePlane { center, normal })
}

/// A unit tangent of the plane pointing from its centre towards `toward`
/// (projected); falls back to a fixed axis when `toward` lies on the normal.
pub fn plane_tangent(plane: &ScenePlane, toward: &Vector3<f64>) -> Vector3<f64> {
    let n = plane.normal;
    let project = |v: Vector3<f64>| v - n * v.dot(&n);
    let t = project(toward - plane.center);
    if t.norm() > 1e-9 {
        return t.normalize();
    }
    let fallback = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    project(fallback).normalize()
}

/// Camera pose looking at the plane centre from `distance`, its optical axis
/// tilted by `angle` from the normal towards the base origin.
pub fn alignment_pose(plane: &ScenePlane, angle: f64, distance: f64) -> RigidTransform {
    let n = plane.normal;
    let t = plane_tangent(plane, &Vector3::zeros());
    let b = n.cross(&t);
    let offset = n * angle.cos() + t * angle.sin();
    let z = -offset;
    let x = b;
    let y = z.cross(&x);
    RigidTransform::new(Matrix3::from_columns(&[x, y, z]), plane.center + offset * distance)
}

/// `n_views` poses obtained by rotating `base` about the plane's normal axis
/// through its centre in equal steps.
pub fn orbit_plan(base: &RigidTransform, plane: &ScenePlane, n_views: usize) -> Vec<RigidTransform> {
    (0..n_views)
        .map(|k| {
            if k == 0 {
                return *base;
            }
            let angle = std::f64::consts::TAU * k as f64 / n_views as f64;
            let r = RigidTransform::from_axis_angle(&plane.normal, angle).rotation;
            let about = RigidTransform::new(r, plane.center - r * plane.center);
            about.compose(base)
        })
        .collect()
}

/// Four marker observations on a square of half-width `half_size` around the
/// plane centre, seen from `camera` (pose in base), with Gaussian noise.
pub fn synthetic_markers<R: Rng>(
    plane: &ScenePlane,
    camera: &RigidTransform,
    half_size: f64,
    sigma: f64,
    rng: &mut R,
) -> Vec<MarkerObservation> {
    let square = [[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]].map(|[a, b]| [a * half_size, b * half_size]);
    markers_at(plane, camera, &square, sigma, rng)
}

/// Marker observations at in-plane `offsets` from the plane centre, measured
/// along the plane tangent towards the base and its normal-cross complement.
pub fn markers_at<R: Rng>(
    plane: &ScenePlane,
    camera: &RigidTransform,
    offsets: &[[f64; 2]],
    sigma: f64,
    rng: &mut R,
) -> Vec<MarkerObservation> {
    let t = plane_tangent(plane, &Vector3::zeros());
    let b = plane.normal.cross(&t);
    let to_cam = camera.invert();
    let noise = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
    offsets
        .iter()
        .enumerate()
        .map(|(k, [a, c])| {
            let p = plane.center + t * *a + b * *c;
            let mut pc = to_cam.transform_point(&p);
            if sigma > 0.0 {
                pc += Vector3::from_fn(|_, _| noise.sample(rng));
            }
            MarkerObservation { marker_id: k as u32, center_cam: pc, sigma }
        })
        .collect()
}
