//! Illustrative B-mode rendering: slice sampling of an echogenicity volume,
//! exponential attenuation and Rayleigh speckle. Not a physical model.

use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::se3::RigidTransform;

/// Spherical inclusion of distinct echogenicity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Inclusion {
    pub center: [f64; 3],
    pub radius: f64,
    pub echogenicity: f64,
}

/// Regular grid of echogenicity values in [0, 1]; voxel `(i, j, k)` covers
/// `origin + pitch·([i, i+1), [j, j+1), [k, k+1))` in the volume frame,
/// which sits at `frame` in the base.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelPhantom {
    pub dims: [usize; 3],
    pub pitch: f64,
    pub origin: Vector3<f64>,
    pub frame: RigidTransform,
    values: Vec<f32>,
}

impl VoxelPhantom {
    pub fn uniform(dims: [usize; 3], pitch: f64, origin: Vector3<f64>, value: f64) -> Self {
        Self { dims, pitch, origin, frame: RigidTransform::identity(), values: vec![value.clamp(0.0, 1.0) as f32; dims[0] * dims[1] * dims[2]] }
    }

    /// Uniform background with spherical inclusions painted in; inclusions that
    /// do not fit inside the volume are skipped and returned.
    pub fn with_inclusions(
        dims: [usize; 3],
        pitch: f64,
        origin: Vector3<f64>,
        background: f64,
        inclusions: &[Inclusion],
    ) -> (Self, Vec<Inclusion>) {
        let mut p = Self::uniform(dims, pitch, origin, background);
        let extent = Vector3::new(dims[0] as f64, dims[1] as f64, dims[2] as f64) * pitch;
        let mut skipped = Vec::new();
        for inc in inclusions {
            let c = Vector3::from(inc.center) - origin;
            let inside = (0..3).all(|a| c[a] - inc.radius >= 0.0 && c[a] + inc.radius <= extent[a]);
            if !inside {
                skipped.push(*inc);
                continue;
            }
            for k in 0..dims[2] {
                for j in 0..dims[1] {
                    for i in 0..dims[0] {
                        let centre = Vector3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * pitch;
                        if (centre - c).norm() <= inc.radius {
                            let idx = p.index(i, j, k);
                            p.values[idx] = inc.echogenicity.clamp(0.0, 1.0) as f32;
                        }
                    }
                }
            }
        }
        (p, skipped)
    }

    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    /// Nearest-voxel echogenicity at a base-frame point; zero outside the volume.
    pub fn sample(&self, p: &Vector3<f64>) -> f64 {
        let local = (self.frame.inverse_transform_point(p) - self.origin) / self.pitch;
        if local.iter().any(|v| *v < 0.0) {
            return 0.0;
        }
        let (i, j, k) = (local.x as usize, local.y as usize, local.z as usize);
        if i >= self.dims[0] || j >= self.dims[1] || k >= self.dims[2] {
            return 0.0;
        }
        self.values[self.index(i, j, k)] as f64
    }

    /// Zeroes every voxel whose centre lies above `height(x, y)`, in volume-frame coordinates.
    pub fn clear_above(&mut self, height: impl Fn(f64, f64) -> f64) {
        for j in 0..self.dims[1] {
            for i in 0..self.dims[0] {
                let x = self.origin.x + (i as f64 + 0.5) * self.pitch;
                let y = self.origin.y + (j as f64 + 0.5) * self.pitch;
                let h = height(x, y);
                for k in 0..self.dims[2] {
                    if self.origin.z + (k as f64 + 0.5) * self.pitch > h {
                        let idx = self.index(i, j, k);
                        self.values[idx] = 0.0;
                    }
                }
            }
        }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SliceParams {
    /// Lateral field of view (m).
    pub width: f64,
    /// Imaging depth (m).
    pub depth: f64,
    pub columns: usize,
    pub rows: usize,
    /// Intensity attenuation per metre of depth.
    pub attenuation: f64,
    pub speckle: bool,
    /// Probe–surface distance above which the image goes dark (m).
    pub coupling_threshold: f64,
}

impl Default for SliceParams {
    fn default() -> Self {
        Self { width: 0.04, depth: 0.06, columns: 128, rows: 192, attenuation: 50.0, speckle: true, coupling_threshold: 0.0005 }
    }
}

/// Row-major grey image with intensities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl GrayImage {
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|v| *v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }

    /// Binary 8-bit PGM.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        out
    }

    pub fn write_pgm(&self, path: &Path) -> std::io::Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_pgm())
    }
}

/// Renders the slice in the probe x–z plane: columns span x ∈ [−w/2, w/2],
/// rows span z ∈ [0, depth] below the tip. `distance` is the current
/// probe–surface distance, positive when not touching.
pub fn us_slice<R: Rng>(
    phantom: &VoxelPhantom,
    probe: &RigidTransform,
    distance: f64,
    params: &SliceParams,
    rng: &mut R,
) -> GrayImage {
    let (w, h) = (params.columns.max(1), params.rows.max(1));
    let coupling = if params.coupling_threshold > 0.0 {
        (1.0 - distance / params.coupling_threshold).clamp(0.0, 1.0)
    } else {
        (distance <= 0.0) as u8 as f64
    };
    // Rayleigh with unit mean via inverse CDF.
    let sigma = (2.0 / std::f64::consts::PI).sqrt();
    let unit = Uniform::new(f64::EPSILON, 1.0).expect("valid range");
    let mut data = Vec::with_capacity(w * h);
    for row in 0..h {
        let z = params.depth * (row as f64 + 0.5) / h as f64;
        let gain = (-params.attenuation * z).exp() * coupling;
        for col in 0..w {
            let x = params.width * ((col as f64 + 0.5) / w as f64 - 0.5);
            let e = phantom.sample(&probe.transform_point(&Vector3::new(x, 0.0, z)));
            let speckle = if params.speckle { sigma * (-2.0 * unit.sample(rng).ln()).sqrt() } else { 1.0 };
            data.push((e * gain * speckle).clamp(0.0, 1.0) as f32);
        }
    }
    GrayImage { width: w, height: h, data }
}
