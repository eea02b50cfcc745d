use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{plane_tangent, DepthImage, SceneError, ScenePlane};
use crate::mesh::shapes::grid_faces;
use crate::mesh::TriMesh;
use crate::se3::RigidTransform;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconstructionParams {
    /// Heightmap cell size (m).
    pub pitch: f64,
    /// Half-width of the square region reconstructed around the plane centre (m).
    pub half_extent: f64,
    /// Largest tolerated fraction of cells without samples.
    pub max_empty_fraction: f64,
    pub min_captures: usize,
}

impl Default for ReconstructionParams {
    fn default() -> Self {
        Self { pitch: 0.002, half_extent: 0.06, max_empty_fraction: 0.2, min_captures: 3 }
    }
}

#[derive(Debug, Clone)]
pub struct ReconstructedSurface {
    /// Mesh in the object frame: origin at the plane centre, z along the normal.
    pub mesh: TriMesh,
    /// Object frame relative to the first camera, `T_CO`.
    pub object_pose: RigidTransform,
    /// First camera pose in the base frame, `T_BC`.
    pub reference_view: RigidTransform,
    pub empty_fraction: f64,
}

impl ReconstructedSurface {
    /// `T_BO = T_BC · T_CO`.
    pub fn object_in_base(&self) -> RigidTransform {
        self.reference_view.compose(&self.object_pose)
    }
}

/// Object frame in the base: origin at the plane centre, z = normal, x along
/// the base x-axis projected into the plane.
pub fn object_frame(plane: &ScenePlane) -> RigidTransform {
    let z = plane.normal;
    let x = plane_tangent(plane, &(plane.center + Vector3::x()));
    let y = z.cross(&x);
    RigidTransform::new(Matrix3::from_columns(&[x, y, z]), plane.center)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Fuses depth captures into a heightmap over `plane` (median per cell) and
/// triangulates it with vertices at cell centres.
pub fn reconstruct_mesh(
    captures: &[DepthImage],
    plane: &ScenePlane,
    params: &ReconstructionParams,
) -> Result<ReconstructedSurface, SceneError> {
    if captures.len() < params.min_captures.max(1) {
        return Err(SceneError::TooFewCaptures { needed: params.min_captures.max(1), got: captures.len() });
    }
    let n = ((2.0 * params.half_extent / params.pitch).round() as usize).max(2);
    let pitch = 2.0 * params.half_extent / n as f64;
    let t_bo = object_frame(plane);
    let t_ob = t_bo.invert();

    let mut cells: Vec<Vec<f64>> = vec![Vec::new(); n * n];
    for capture in captures {
        for p in capture.points() {
            let local = t_ob.transform_point(&p);
            let fi = (local.x + params.half_extent) / pitch;
            let fj = (local.y + params.half_extent) / pitch;
            if fi < 0.0 || fj < 0.0 {
                continue;
            }
            let (i, j) = (fi as usize, fj as usize);
            if i < n && j < n {
                cells[j * n + i].push(local.z);
            }
        }
    }

    let mut heights: Vec<Option<f64>> = cells.iter_mut().map(|c| (!c.is_empty()).then(|| median(c))).collect();
    let empty = heights.iter().filter(|h| h.is_none()).count();
    let empty_fraction = empty as f64 / (n * n) as f64;
    if empty_fraction > params.max_empty_fraction {
        return Err(SceneError::InsufficientCoverage { empty: 100.0 * empty_fraction });
    }
    fill_holes(&mut heights, n);

    let mut vertices = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let x = -params.half_extent + (i as f64 + 0.5) * pitch;
            let y = -params.half_extent + (j as f64 + 0.5) * pitch;
            vertices.push(Vector3::new(x, y, heights[j * n + i].unwrap_or(0.0)));
        }
    }
    let mesh = TriMesh::new(vertices, grid_faces(n - 1, n - 1)).map_err(|e| SceneError::InvalidImage(e.to_string()))?;
    let reference_view = captures[0].view_pose;
    Ok(ReconstructedSurface {
        mesh,
        object_pose: reference_view.invert().compose(&t_bo),
        reference_view,
        empty_fraction,
    })
}

/// Fills empty cells with the mean of their filled 4-neighbours, sweeping
/// until nothing changes.
fn fill_holes(heights: &mut [Option<f64>], n: usize) {
    loop {
        let snapshot = heights.to_vec();
        let mut changed = false;
        for j in 0..n {
            for i in 0..n {
                if snapshot[j * n + i].is_some() {
                    continue;
                }
                let mut sum = 0.0;
                let mut count = 0;
                let neighbours = [(i.wrapping_sub(1), j), (i + 1, j), (i, j.wrapping_sub(1)), (i, j + 1)];
                for (a, b) in neighbours {
                    if a < n && b < n {
                        if let Some(h) = snapshot[b * n + a] {
                            sum += h;
                            count += 1;
                        }
                    }
                }
                if count > 0 {
                    heights[j * n + i] = Some(sum / count as f64);
                    changed = true;
                }
            }
        }
        if !changed {
            return;
        }
    }
}
