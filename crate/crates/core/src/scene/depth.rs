use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{Matrix4, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SceneError;
use crate::mesh::TriMesh;
use crate::se3::RigidTransform;

pub const MIN_RESOLUTION: usize = 16;

/// Pinhole intrinsics in pixels. Pixel `(u, v)` looks along
/// `((u − cx)/fx, (v − cy)/fy, 1)` in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Square pixels, principal point at the image centre, horizontal field of view `fov_x`.
    pub fn from_fov(width: usize, height: usize, fov_x: f64) -> Self {
        let f = 0.5 * width as f64 / (0.5 * fov_x).tan();
        Self {
            width,
            height,
            fx: f,
            fy: f,
            cx: 0.5 * (width as f64 - 1.0),
            cy: 0.5 * (height as f64 - 1.0),
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.width < MIN_RESOLUTION || self.height < MIN_RESOLUTION {
            return Err(SceneError::InvalidImage(format!(
                "resolution {}x{} below {MIN_RESOLUTION}x{MIN_RESOLUTION}",
                self.width, self.height
            )));
        }
        if !(self.fx > 0.0 && self.fy > 0.0 && self.cx > 0.0 && self.cy > 0.0) {
            return Err(SceneError::InvalidImage("intrinsics must be positive".into()));
        }
        Ok(())
    }

    /// Unit ray direction of pixel `(u, v)` in the camera frame.
    pub fn ray(&self, u: usize, v: usize) -> Vector3<f64> {
        Vector3::new((u as f64 - self.cx) / self.fx, (v as f64 - self.cy) / self.fy, 1.0).normalize()
    }
}

impl Default for Intrinsics {
    fn default() -> Self {
        Self::from_fov(320, 240, 60f64.to_radians())
    }
}

/// Ground-truth geometry for synthetic capture.
#[derive(Debug, Clone)]
pub enum Surface {
    /// Infinite plane.
    Plane { point: Vector3<f64>, normal: Vector3<f64> },
    /// The half of a sphere on the `axis` side of its centre.
    Dome { center: Vector3<f64>, radius: f64, axis: Vector3<f64> },
    Mesh(Arc<TriMesh>),
}

impl Surface {
    /// Hemisphere resting on a table plane through its centre.
    pub fn hemisphere_on_table(center: Vector3<f64>, radius: f64, up: Vector3<f64>) -> Vec<Surface> {
        let up = up.normalize();
        vec![Surface::Dome { center, radius, axis: up }, Surface::Plane { point: center, normal: up }]
    }

    /// Distance along the unit ray to the first hit, if any.
    pub fn raycast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match self {
            Surface::Plane { point, normal } => {
                let denom = dir.dot(normal);
                if denom.abs() < 1e-15 {
                    return None;
                }
                let t = (point - origin).dot(normal) / denom;
                (t > 0.0).then_some(t)
            }
            Surface::Dome { center, radius, axis } => {
                let oc = origin - center;
                let b = oc.dot(dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let root = disc.sqrt();
                [-b - root, -b + root]
                    .into_iter()
                    .find(|&t| t > 0.0 && (oc + dir * t).dot(axis) >= 0.0)
            }
            Surface::Mesh(mesh) => mesh.raycast(origin, dir).map(|(t, _)| t),
        }
    }
}

/// First hit over all surfaces in the scene.
pub fn scene_raycast(scene: &[Surface], origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
    scene.iter().filter_map(|s| s.raycast(origin, dir)).min_by(f64::total_cmp)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub intrinsics: Intrinsics,
    /// Row-major range along each pixel ray (m); 0 marks no return.
    pub depths: Vec<f64>,
    /// Camera pose in the base frame.
    pub view_pose: RigidTransform,
}

impl DepthImage {
    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    pub fn at(&self, u: usize, v: usize) -> f64 {
        self.depths[v * self.intrinsics.width + u]
    }

    /// Back-projected returns in the base frame.
    pub fn points(&self) -> Vec<Vector3<f64>> {
        let k = &self.intrinsics;
        let mut out = Vec::new();
        for v in 0..k.height {
            for u in 0..k.width {
                let r = self.at(u, v);
                if r > 0.0 {
                    out.push(self.view_pose.transform_point(&(k.ray(u, v) * r)));
                }
            }
        }
        out
    }

    /// Adds zero-mean Gaussian range noise to every return.
    pub fn add_noise<R: Rng>(&mut self, sigma: f64, rng: &mut R) {
        if sigma <= 0.0 {
            return;
        }
        let n = Normal::new(0.0, sigma).expect("finite sigma");
        for d in self.depths.iter_mut().filter(|d| **d > 0.0) {
            *d = (*d + n.sample(rng)).max(0.0);
        }
    }
}

/// Ray-casts every pixel of a pinhole camera at `view` against the scene.
pub fn capture_depth(scene: &[Surface], view: &RigidTransform, intrinsics: &Intrinsics) -> Result<DepthImage, SceneError> {
    intrinsics.validate()?;
    let mut depths = Vec::with_capacity(intrinsics.width * intrinsics.height);
    for v in 0..intrinsics.height {
        for u in 0..intrinsics.width {
            let dir = view.rotation * intrinsics.ray(u, v);
            depths.push(scene_raycast(scene, &view.translation, &dir).unwrap_or(0.0));
        }
    }
    Ok(DepthImage { intrinsics: *intrinsics, depths, view_pose: *view })
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format: String,
    intrinsics: Intrinsics,
    /// Row-major 4×4 homogeneous camera pose in the base frame.
    view_pose: [[f64; 4]; 4],
    data: String,
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

/// Writes `<stem>.bin` (little-endian f64 ranges, row-major) and `<stem>.json`.
pub fn write_depth_image(stem: &Path, image: &DepthImage) -> Result<(), SceneError> {
    let io = |e: std::io::Error| SceneError::Io(e.to_string());
    let bin = with_ext(stem, ".bin");
    let bytes: Vec<u8> = image.depths.iter().flat_map(|d| d.to_le_bytes()).collect();
    fs::write(&bin, bytes).map_err(io)?;
    let h = image.view_pose.to_homogeneous();
    let sidecar = Sidecar {
        format: "f64le".into(),
        intrinsics: image.intrinsics,
        view_pose: std::array::from_fn(|r| std::array::from_fn(|c| h[(r, c)])),
        data: bin.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
    };
    let json = serde_json::to_string_pretty(&sidecar).map_err(|e| SceneError::Io(e.to_string()))?;
    fs::write(with_ext(stem, ".json"), json).map_err(io)
}

pub fn read_depth_image(stem: &Path) -> Result<DepthImage, SceneError> {
    let io = |e: std::io::Error| SceneError::Io(e.to_string());
    let text = fs::read_to_string(with_ext(stem, ".json")).map_err(io)?;
    let side: Sidecar = serde_json::from_str(&text).map_err(|e| SceneError::InvalidImage(e.to_string()))?;
    if side.format != "f64le" {
        return Err(SceneError::InvalidImage(format!("unsupported format {}", side.format)));
    }
    side.intrinsics.validate()?;
    let bytes = fs::read(with_ext(stem, ".bin")).map_err(io)?;
    let n = side.intrinsics.width * side.intrinsics.height;
    if bytes.len() != 8 * n {
        return Err(SceneError::InvalidImage(format!("expected {} bytes, found {}", 8 * n, bytes.len())));
    }
    let depths: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    if depths.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(SceneError::InvalidImage("negative or non-finite depth".into()));
    }
    let h = Matrix4::from_fn(|r, c| side.view_pose[r][c]);
    Ok(DepthImage { intrinsics: side.intrinsics, depths, view_pose: RigidTransform::from_homogeneous(&h) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes::grid_mesh;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn nadir(height: f64) -> RigidTransform {
        let down = RigidTransform::from_axis_angle(&Vector3::x(), std::f64::consts::PI).rotation;
        RigidTransform::new(down, Vector3::new(0.0, 0.0, height))
    }

    #[test]
    fn plane_depth_follows_ray_angle() {
        let scene = [Surface::Plane { point: Vector3::zeros(), normal: Vector3::z() }];
        let k = Intrinsics::from_fov(33, 25, 1.0);
        let img = capture_depth(&scene, &nadir(0.5), &k).unwrap();
        for v in 0..k.height {
            for u in 0..k.width {
                let cos = k.ray(u, v).z;
                assert!((img.at(u, v) - 0.5 / cos).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_scene_is_black() {
        let img = capture_depth(&[], &nadir(0.5), &Intrinsics::from_fov(16, 16, 1.0)).unwrap();
        assert!(img.depths.iter().all(|&d| d == 0.0));
        assert!(img.points().is_empty());
    }

    #[test]
    fn hemisphere_apex_depth() {
        let scene = Surface::hemisphere_on_table(Vector3::zeros(), 0.05, Vector3::z());
        let k = Intrinsics::from_fov(65, 49, 1.0);
        let img = capture_depth(&scene, &nadir(0.3), &k).unwrap();
        assert!((img.at(32, 24) - 0.25).abs() < 1e-6);
        // Off-axis ray: analytic ray-sphere root.
        let dir = k.ray(40, 24);
        let d = Vector3::new(dir.x, -dir.y, -dir.z);
        let o = Vector3::new(0.0, 0.0, 0.3);
        let b = o.dot(&d);
        let t = -b - (b * b - (o.norm_squared() - 0.05 * 0.05)).sqrt();
        assert!((img.at(40, 24) - t).abs() < 1e-12);
    }

    #[test]
    fn mesh_and_analytic_plane_agree() {
        let mesh = grid_mesh(4, 4, 2.0, 2.0, |_, _| 0.0);
        let analytic = capture_depth(&[Surface::Plane { point: Vector3::zeros(), normal: Vector3::z() }], &nadir(0.4), &Intrinsics::from_fov(20, 20, 1.0)).unwrap();
        let meshed = capture_depth(&[Surface::Mesh(Arc::new(mesh))], &nadir(0.4), &Intrinsics::from_fov(20, 20, 1.0)).unwrap();
        for (a, b) in analytic.depths.iter().zip(&meshed.depths) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn low_resolution_rejected() {
        assert!(capture_depth(&[], &nadir(0.5), &Intrinsics::from_fov(15, 16, 1.0)).is_err());
    }

    #[test]
    fn back_projection_lies_on_surface() {
        let scene = Surface::hemisphere_on_table(Vector3::new(0.1, 0.0, 0.0), 0.05, Vector3::z());
        let view = RigidTransform::from_xyz_rpy([0.3, 0.0, 0.25], [std::f64::consts::PI, -0.7, 0.0]);
        let img = capture_depth(&scene, &view, &Intrinsics::from_fov(48, 32, 1.2)).unwrap();
        let pts = img.points();
        assert!(!pts.is_empty());
        for p in pts {
            let r = (p - Vector3::new(0.1, 0.0, 0.0)).norm();
            assert!(p.z.abs() < 1e-9 || (r - 0.05).abs() < 1e-9);
        }
    }

    #[test]
    fn file_round_trip() {
        let scene = Surface::hemisphere_on_table(Vector3::zeros(), 0.05, Vector3::z());
        let mut img = capture_depth(&scene, &nadir(0.3), &Intrinsics::from_fov(24, 18, 1.0)).unwrap();
        img.add_noise(0.001, &mut ChaCha8Rng::seed_from_u64(3));
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("view_00");
        write_depth_image(&stem, &img).unwrap();
        let back = read_depth_image(&stem).unwrap();
        assert_eq!(back.depths, img.depths);
        assert_eq!(back.intrinsics, img.intrinsics);
        assert!(back.view_pose.distance_frobenius(&img.view_pose) < 1e-15);
    }
}
