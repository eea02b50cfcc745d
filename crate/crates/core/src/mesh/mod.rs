//! Triangle meshes: validation, vertex normals, topology, closest-point queries and PLY IO.

mod bvh;
mod closest;
pub mod ply;
pub mod shapes;

use std::collections::HashMap;

use nalgebra::Vector3;
use thiserror::Error;

use crate::se3::RigidTransform;

pub use bvh::{Aabb, Bvh};
pub use closest::{closest_point_on_triangle, TrianglePoint};

/// Faces with area at or below this are rejected (m²).
pub const MIN_FACE_AREA: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("mesh has no faces")]
    Empty,
    #[error("face {0} references a vertex out of range")]
    IndexOutOfRange(usize),
    #[error("face {0} is degenerate (area <= 1e-12 m^2)")]
    DegenerateFace(usize),
    #[error("vertex {0} is not referenced by any face")]
    IsolatedVertex(usize),
    #[error("edge ({0}, {1}) is shared by more than two faces or has inconsistent winding")]
    NonManifoldEdge(usize, usize),
    #[error("mesh is not a topological disk: {boundary_loops} boundary loop(s), Euler characteristic {euler}")]
    NonDiskTopology { boundary_loops: usize, euler: i64 },
    #[error("PLY parse error: {0}")]
    Ply(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for MeshError {
    fn from(e: std::io::Error) -> Self {
        MeshError::Io(e.to_string())
    }
}

/// Which part of a triangle a closest point landed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feature {
    Interior,
    Edge(usize, usize),
    Vertex(usize),
}

/// Result of a closest-point query against a mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub face: usize,
    pub bary: Vector3<f64>,
    pub foot: Vector3<f64>,
    /// Signed distance; positive on the side the interpolated normal points to.
    pub distance: f64,
    /// Barycentric interpolation of vertex normals, renormalised.
    pub normal: Vector3<f64>,
    pub feature: Feature,
}

/// An oriented, edge-manifold triangle mesh with area-weighted vertex normals
/// and a bounding-volume hierarchy built at construction.
#[derive(Debug, Clone)]
pub struct TriMesh {
    vertices: Vec<Vector3<f64>>,
    faces: Vec<[usize; 3]>,
    normals: Vec<Vector3<f64>>,
    face_normals: Vec<Vector3<f64>>,
    boundary_edges: HashMap<(usize, usize), usize>,
    on_boundary: Vec<bool>,
    bvh: Bvh,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vector3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        if faces.is_empty() {
            return Err(MeshError::Empty);
        }
        let mut referenced = vec![false; vertices.len()];
        let mut face_normals = Vec::with_capacity(faces.len());
        let mut normals = vec![Vector3::zeros(); vertices.len()];
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&v| v >= vertices.len()) {
                return Err(MeshError::IndexOutOfRange(fi));
            }
            let [a, b, c] = f.map(|i| vertices[i]);
            let cross = (b - a).cross(&(c - a));
            if 0.5 * cross.norm() <= MIN_FACE_AREA || f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(MeshError::DegenerateFace(fi));
            }
            // |cross| = 2·area, so summing raw cross products is area weighting.
            for &v in f {
                normals[v] += cross;
                referenced[v] = true;
            }
            face_normals.push(cross.normalize());
        }
        if let Some(v) = referenced.iter().position(|r| !r) {
            return Err(MeshError::IsolatedVertex(v));
        }
        for n in &mut normals {
            *n = n.normalize();
        }

        let mut directed: HashMap<(usize, usize), usize> = HashMap::with_capacity(faces.len() * 3);
        for (fi, f) in faces.iter().enumerate() {
            for k in 0..3 {
                let e = (f[k], f[(k + 1) % 3]);
                if directed.insert(e, fi).is_some() {
                    return Err(MeshError::NonManifoldEdge(e.0, e.1));
                }
            }
        }
        let boundary_edges: HashMap<(usize, usize), usize> = directed
            .iter()
            .filter(|(&(u, v), _)| !directed.contains_key(&(v, u)))
            .map(|(&e, &f)| (e, f))
            .collect();
        let mut on_boundary = vec![false; vertices.len()];
        for &(u, v) in boundary_edges.keys() {
            on_boundary[u] = true;
            on_boundary[v] = true;
        }

        let boxes: Vec<Aabb> = faces
            .iter()
            .map(|f| Aabb::from_points(f.iter().map(|&i| &vertices[i])))
            .collect();
        let bvh = Bvh::build(&boxes);

        Ok(Self { vertices, faces, normals, face_normals, boundary_edges, on_boundary, bvh })
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn vertex_normals(&self) -> &[Vector3<f64>] {
        &self.normals
    }

    pub fn face_normal(&self, face: usize) -> Vector3<f64> {
        self.face_normals[face]
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.faces[face].map(|i| self.vertices[i]);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(self.vertices.iter())
    }

    pub fn is_boundary_edge(&self, a: usize, b: usize) -> bool {
        self.boundary_edges.contains_key(&(a, b)) || self.boundary_edges.contains_key(&(b, a))
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.on_boundary[v]
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        let interior = self.faces.len() * 3 - self.boundary_edges.len();
        interior / 2 + self.boundary_edges.len()
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_count() as i64 + self.faces.len() as i64
    }

    /// All boundary loops, each traversed in the direction of the face winding.
    pub fn boundary_loops(&self) -> Vec<Vec<usize>> {
        let mut next: HashMap<usize, Vec<usize>> = HashMap::new();
        for &(u, v) in self.boundary_edges.keys() {
            next.entry(u).or_default().push(v);
        }
        for succ in next.values_mut() {
            succ.sort_unstable();
        }
        let mut starts: Vec<usize> = next.keys().copied().collect();
        starts.sort_unstable();
        let mut used: HashMap<(usize, usize), bool> = HashMap::new();
        let mut loops = Vec::new();
        for s in starts {
            for &first in &next[&s] {
                if used.contains_key(&(s, first)) {
                    continue;
                }
                let mut lp = vec![s];
                let (mut u, mut v) = (s, first);
                loop {
                    used.insert((u, v), true);
                    if v == s {
                        break;
                    }
                    lp.push(v);
                    let cand = next[&v].iter().copied().find(|&w| !used.contains_key(&(v, w)));
                    match cand {
                        Some(w) => {
                            u = v;
                            v = w;
                        }
                        None => break,
                    }
                }
                loops.push(lp);
            }
        }
        loops
    }

    /// The single boundary loop of a disk-topology mesh.
    pub fn disk_boundary(&self) -> Result<Vec<usize>, MeshError> {
        let loops = self.boundary_loops();
        let euler = self.euler_characteristic();
        if loops.len() != 1 || euler != 1 {
            return Err(MeshError::NonDiskTopology { boundary_loops: loops.len(), euler });
        }
        Ok(loops.into_iter().next().unwrap())
    }

    pub fn interpolate_normal(&self, face: usize, bary: &Vector3<f64>) -> Vector3<f64> {
        let f = self.faces[face];
        let n = self.normals[f[0]] * bary[0] + self.normals[f[1]] * bary[1] + self.normals[f[2]] * bary[2];
        let norm = n.norm();
        if norm > 1e-12 {
            n / norm
        } else {
            self.face_normals[face]
        }
    }

    /// Exact closest point over all faces, accelerated by the BVH.
    pub fn closest_point(&self, p: &Vector3<f64>) -> SurfacePoint {
        let (face, tp) = self
            .bvh
            .nearest(p, |fi| {
                let [a, b, c] = self.faces[fi].map(|i| self.vertices[i]);
                let tp = closest_point_on_triangle(p, &a, &b, &c);
                ((tp.point - p).norm_squared(), tp)
            })
            .expect("mesh has at least one face");
        self.surface_point(p, face, &tp)
    }

    fn surface_point(&self, p: &Vector3<f64>, face: usize, tp: &TrianglePoint) -> SurfacePoint {
        let normal = self.interpolate_normal(face, &tp.bary);
        let offset = p - tp.point;
        let dist = offset.norm();
        let side = offset.dot(&normal);
        let distance = if side < 0.0 { -dist } else { dist };
        let f = self.faces[face];
        let zero: Vec<usize> = (0..3).filter(|&k| tp.bary[k] == 0.0).collect();
        let feature = match zero.len() {
            0 => Feature::Interior,
            1 => {
                let k = zero[0];
                Feature::Edge(f[(k + 1) % 3], f[(k + 2) % 3])
            }
            _ => {
                let k = (0..3).find(|k| !zero.contains(k)).unwrap();
                Feature::Vertex(f[k])
            }
        };
        SurfacePoint { face, bary: tp.bary, foot: tp.point, distance, normal, feature }
    }

    /// First hit of the ray `origin + t·dir` (t > 0) with the mesh: (t, face).
    pub fn raycast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, usize)> {
        self.bvh.raycast(origin, dir, |fi| {
            let [a, b, c] = self.faces[fi].map(|i| self.vertices[i]);
            ray_triangle(origin, dir, &a, &b, &c)
        })
    }

    /// A copy with every vertex mapped through `t` (normals follow).
    pub fn transformed(&self, t: &RigidTransform) -> TriMesh {
        let verts = self.vertices.iter().map(|v| t.transform_point(v)).collect();
        TriMesh::new(verts, self.faces.clone()).expect("rigid motion preserves validity")
    }
}

/// Möller–Trumbore, two-sided.
pub fn ray_triangle(
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let pv = dir.cross(&e2);
    let det = e1.dot(&pv);
    if det.abs() < 1e-18 {
        return None;
    }
    let inv = 1.0 / det;
    let tv = origin - a;
    let u = tv.dot(&pv) * inv;
    if !(-1e-12..=1.0 + 1e-12).contains(&u) {
        return None;
    }
    let qv = tv.cross(&e1);
    let v = dir.dot(&qv) * inv;
    if v < -1e-12 || u + v > 1.0 + 1e-12 {
        return None;
    }
    let t = e2.dot(&qv) * inv;
    (t > 1e-12).then_some(t)
}
