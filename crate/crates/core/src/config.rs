//! Scene configuration: robot, phantom, camera, controller and experiment
//! parameters, read from JSON. Every field has a default, so `{}` is a valid
//! scene. Lengths are in metres and angles in radians.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{ChartRegion, GainsConfig, LandingProfile, TeleopLimits};
use crate::dynamics::DynamicsConfig;
use crate::kinematics::{ChainConfig, JointVector, DOF};
use crate::mesh::shapes::grid_mesh;
use crate::mesh::TriMesh;
use crate::scene::{Intrinsics, ReconstructionParams, ScenePlane, Surface};
use crate::se3::{PoseSpec, RigidTransform};
use crate::sim::{ContactParams, Inclusion, PhantomModel, SliceParams, VoxelPhantom, DEFAULT_DT};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid config JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Ground-truth phantom surface shape, in the phantom's own frame (z up).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhantomShape {
    Plane,
    /// Smooth bulge, `height·exp(−r²/2σ²)`.
    GaussianBump { height: f64, sigma: f64 },
    /// Hemisphere resting on the table.
    Hemisphere { radius: f64 },
}

impl PhantomShape {
    pub fn height(&self, x: f64, y: f64) -> f64 {
        match *self {
            PhantomShape::Plane => 0.0,
            PhantomShape::GaussianBump { height, sigma } => height * (-(x * x + y * y) / (2.0 * sigma * sigma)).exp(),
            PhantomShape::Hemisphere { radius } => (radius * radius - x * x - y * y).max(0.0).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub shape: PhantomShape,
    /// Phantom frame in the robot base (its table plane passes through the origin).
    pub pose: PoseSpec,
    /// Side length of the square meshed for contact (m).
    pub size: f64,
    /// Cells per side of the contact mesh.
    pub resolution: usize,
    pub contact: ContactParams,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            shape: PhantomShape::GaussianBump { height: 0.03, sigma: 0.035 },
            pose: PoseSpec { xyz: [0.55, 0.0, 0.0], rpy: [0.0; 3] },
            size: 0.24,
            resolution: 96,
            contact: ContactParams::default(),
        }
    }
}

impl PhantomConfig {
    pub fn frame(&self) -> RigidTransform {
        self.pose.into()
    }

    /// Table plane through the phantom origin.
    pub fn table_plane(&self) -> ScenePlane {
        let f = self.frame();
        ScenePlane::new(f.translation, f.rotation.column(2).into_owned())
    }

    /// Tissue surface in the base frame.
    pub fn surface_mesh(&self) -> TriMesh {
        let shape = self.shape;
        grid_mesh(self.resolution, self.resolution, self.size, self.size, |x, y| shape.height(x, y)).transformed(&self.frame())
    }

    pub fn model(&self) -> PhantomModel {
        PhantomModel { surface: self.surface_mesh(), contact: self.contact }
    }

    /// Geometry seen by the depth camera: the phantom plus the table.
    pub fn capture_scene(&self) -> Vec<Surface> {
        let f = self.frame();
        let up = f.rotation.column(2).into_owned();
        match self.shape {
            PhantomShape::Plane => vec![Surface::Plane { point: f.translation, normal: up }],
            PhantomShape::Hemisphere { radius } => Surface::hemisphere_on_table(f.translation, radius, up),
            PhantomShape::GaussianBump { .. } => vec![
                Surface::Mesh(Arc::new(self.surface_mesh())),
                Surface::Plane { point: f.translation, normal: up },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarkerConfig {
    /// In-plane marker offsets from the phantom origin (m); four entries.
    pub offsets: Vec<[f64; 2]>,
    /// Detection noise (m).
    pub sigma: f64,
}

impl Default for MarkerConfig {
    fn default() -> Self {
        let h = 0.12;
        Self { offsets: vec![[h, h], [-h, h], [-h, -h], [h, -h]], sigma: 0.0005 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub intrinsics: Intrinsics,
    /// Tilt of the optical axis from the plane normal.
    pub view_angle: f64,
    pub view_distance: f64,
    pub views: usize,
    /// Range noise (m).
    pub depth_noise: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            intrinsics: Intrinsics::default(),
            view_angle: crate::scene::DEFAULT_VIEW_ANGLE,
            view_distance: crate::scene::DEFAULT_VIEW_DISTANCE,
            views: crate::scene::DEFAULT_VIEWS,
            depth_noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandingConfig {
    pub profile: LandingProfile,
    /// Chart position to land at.
    pub s: [f64; 2],
    pub settle_time: f64,
    pub hold_time: f64,
}

impl Default for LandingConfig {
    fn default() -> Self {
        Self { profile: LandingProfile::default(), s: [0.5, 0.5], settle_time: 2.0, hold_time: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub region: ChartRegion,
    /// Raster line spacing (chart units).
    pub spacing: f64,
    /// Chart units per second.
    pub speed: f64,
    /// Distance setpoint while scanning (m).
    pub distance: f64,
    /// Stand-off used in safety-margin mode (m).
    pub safety_margin: f64,
    pub teleop: TeleopLimits,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            region: ChartRegion { min: [0.3, 0.3], max: [0.7, 0.7] },
            spacing: 0.1,
            speed: 0.02,
            distance: -0.001,
            safety_margin: 0.005,
            teleop: TeleopLimits::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UltrasoundConfig {
    pub slice: SliceParams,
    pub voxel_pitch: f64,
    /// Depth of the gelatine block below the table plane (m).
    pub block_depth: f64,
    pub background: f64,
    /// Inclusions in the phantom frame.
    pub inclusions: Vec<Inclusion>,
}

impl Default for UltrasoundConfig {
    fn default() -> Self {
        let inc = |c: [f64; 3], r: f64, e: f64| Inclusion { center: c, radius: r, echogenicity: e };
        Self {
            slice: SliceParams::default(),
            voxel_pitch: 0.001,
            block_depth: 0.06,
            background: 0.35,
            inclusions: vec![
                inc([0.0, 0.0, -0.005], 0.009, 0.9),
                inc([0.025, 0.01, -0.02], 0.007, 0.7),
                inc([-0.02, -0.015, -0.015], 0.005, 0.95),
                inc([0.0, -0.03, -0.03], 0.004, 1.0),
            ],
        }
    }
}

impl UltrasoundConfig {
    /// Echogenicity volume aligned with the phantom frame, empty above the
    /// tissue surface.
    pub fn voxel_phantom(&self, phantom: &PhantomConfig) -> VoxelPhantom {
        let shape = phantom.shape;
        let top = (0..=20)
            .flat_map(|i| (0..=20).map(move |j| (i, j)))
            .map(|(i, j)| shape.height(phantom.size * (i as f64 / 20.0 - 0.5), phantom.size * (j as f64 / 20.0 - 0.5)))
            .fold(0.0, f64::max);
        let n_xy = (phantom.size / self.voxel_pitch).round() as usize;
        let n_z = ((self.block_depth + top) / self.voxel_pitch).ceil() as usize;
        let origin = Vector3::new(-0.5 * phantom.size, -0.5 * phantom.size, -self.block_depth);
        let (mut volume, _) = VoxelPhantom::with_inclusions([n_xy, n_xy, n_z], self.voxel_pitch, origin, self.background, &self.inclusions);
        volume.clear_above(|x, y| shape.height(x, y));
        volume.frame = phantom.frame();
        volume
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub chain: ChainConfig,
    pub dynamics: DynamicsConfig,
    /// Rough initial configuration with the probe above the phantom.
    pub initial_q: [f64; DOF],
    pub phantom: PhantomConfig,
    pub markers: MarkerConfig,
    pub camera: CameraConfig,
    pub reconstruction: ReconstructionParams,
    pub gains: GainsConfig,
    pub landing: LandingConfig,
    pub scan: ScanConfig,
    pub ultrasound: UltrasoundConfig,
    /// F/T sensor noise (N).
    pub ft_noise: f64,
    pub dt: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            chain: ChainConfig::default(),
            dynamics: DynamicsConfig::default(),
            initial_q: DEFAULT_INITIAL_Q,
            phantom: PhantomConfig::default(),
            markers: MarkerConfig::default(),
            camera: CameraConfig::default(),
            reconstruction: ReconstructionParams::default(),
            gains: GainsConfig::default(),
            landing: LandingConfig::default(),
            scan: ScanConfig::default(),
            ultrasound: UltrasoundConfig::default(),
            ft_noise: 0.002,
            dt: DEFAULT_DT,
            seed: 0,
        }
    }
}

/// Probe roughly 3 cm above the top of the default phantom, pointing down.
pub const DEFAULT_INITIAL_Q: [f64; DOF] = [0.0, 0.77, 0.0, -1.6, 0.0, 0.77, 0.0];

impl SceneConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: SceneConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn initial_q(&self) -> JointVector {
        JointVector::from(self.initial_q)
    }

    pub fn landing_s(&self) -> Vector2<f64> {
        Vector2::from(self.landing.s)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        self.chain.build().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.dynamics.links.len() != DOF {
            return bad("dynamics.links must list 7 links");
        }
        if !(self.dt > 0.0 && self.dt <= 1e-2) {
            return bad("dt must lie in (0, 0.01]");
        }
        if self.markers.offsets.len() != 4 {
            return bad("markers.offsets must hold four entries");
        }
        if !(self.phantom.size > 0.0) || self.phantom.resolution < 2 {
            return bad("phantom.size must be positive and resolution at least 2");
        }
        if !(self.phantom.contact.stiffness > 0.0 && self.phantom.contact.damping >= 0.0) {
            return bad("contact stiffness must be positive and damping non-negative");
        }
        if !(self.reconstruction.pitch > 0.0 && self.reconstruction.half_extent > self.reconstruction.pitch) {
            return bad("reconstruction pitch/extent invalid");
        }
        if !(self.camera.view_distance > 0.0) || self.camera.views == 0 {
            return bad("camera view distance and count must be positive");
        }
        self.camera.intrinsics.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.landing.profile.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !self.landing.s.iter().all(|v| (0.0..=1.0).contains(v)) {
            return bad("landing.s must lie in the unit square");
        }
        if !(self.gains.normal > 0.0 && self.gains.rotational > 0.0 && self.gains.tangential >= 0.0 && self.gains.damping_ratio > 0.0) {
            return bad("gains must be positive");
        }
        if self.ft_noise < 0.0 || self.camera.depth_noise < 0.0 || self.markers.sigma < 0.0 {
            return bad("noise levels must be non-negative");
        }
        Ok(())
    }
}
