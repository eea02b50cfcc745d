//! Flattening of a disk-topology mesh onto the unit square.
//!
//! The boundary loop is mapped onto the square's perimeter by arc length, and
//! the interior vertices solve the discrete harmonic equation with cotangent
//! weights. The piecewise-linear map is then checked for injectivity.

use nalgebra::{Matrix2, Matrix3x2, Vector2, Vector3};
use thiserror::Error;

use crate::mesh::{MeshError, TriMesh};
use crate::sparse::TripletBuilder;

/// A boundary vertex whose turning angle exceeds this is treated as a corner.
const CORNER_ANGLE: f64 = std::f64::consts::FRAC_PI_4;
const CG_TOL: f64 = 1e-14;
/// Barycentric slack for point location in the parameter domain.
const LOCATE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChartError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("boundary loop has {0} vertices; at least 4 are needed to cover the square")]
    BoundaryTooShort(usize),
    #[error("harmonic map produced {count} flipped or degenerate uv triangles")]
    FlippedTriangles { count: usize, faces: Vec<usize> },
    #[error("point ({0}, {1}) lies outside every uv triangle")]
    OutsideDomain(f64, f64),
}

/// Distortion summary of a chart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChartStats {
    /// Max over faces of σ_max/σ_min of the surface→uv differential.
    pub max_conformal_distortion: f64,
    pub min_uv_area: f64,
    pub cg_iterations: usize,
    pub cg_residual: f64,
}

/// Point on the surface located through the chart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChartPoint {
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub face: usize,
    pub bary: Vector3<f64>,
}

#[derive(Debug, Clone)]
struct UvLocator {
    res: usize,
    cells: Vec<Vec<usize>>,
}

/// A triangle mesh with a bijective piecewise-linear map to the unit square.
#[derive(Debug, Clone)]
pub struct SurfaceChart {
    mesh: TriMesh,
    uv: Vec<Vector2<f64>>,
    boundary: Vec<usize>,
    tangents: Vec<Vector3<f64>>,
    scale: f64,
    stats: ChartStats,
    locator: UvLocator,
}

fn cot(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.dot(b) / a.cross(b).norm()
}

pub fn signed_area(a: &Vector2<f64>, b: &Vector2<f64>, c: &Vector2<f64>) -> f64 {
    0.5 * ((b - a).perp(&(c - a)))
}

/// Maps the boundary loop to the unit-square perimeter. Returns uv per loop entry.
fn square_boundary(mesh: &TriMesh, boundary: &[usize]) -> Result<Vec<Vector2<f64>>, ChartError> {
    let n = boundary.len();
    if n < 4 {
        return Err(ChartError::BoundaryTooShort(n));
    }
    let pos = |k: usize| mesh.vertices()[boundary[k % n]];
    let turning: Vec<f64> = (0..n)
        .map(|k| {
            let din = pos(k) - pos(k + n - 1);
            let dout = pos(k + 1) - pos(k);
            din.angle(&dout)
        })
        .collect();
    let seg: Vec<f64> = (0..n).map(|k| (pos(k + 1) - pos(k)).norm()).collect();
    let total: f64 = seg.iter().sum();

    let key = |k: usize| {
        let p = pos(k);
        p.x + p.y
    };
    let mut corners: Vec<usize> = (0..n).filter(|&k| turning[k] > CORNER_ANGLE).collect();
    if corners.len() != 4 {
        // No clear corners: split the loop into arc-length quarters from a fixed start.
        let start = (0..n).min_by(|&a, &b| key(a).total_cmp(&key(b))).unwrap();
        corners = vec![start];
        let mut acc = 0.0;
        let mut k = start;
        for q in 1..4 {
            let target = total * q as f64 / 4.0;
            while acc + seg[k % n] * 0.5 < target {
                acc += seg[k % n];
                k += 1;
            }
            let idx = k % n;
            if corners.contains(&idx) {
                return Err(ChartError::BoundaryTooShort(n));
            }
            corners.push(idx);
        }
    } else {
        let first = *corners
            .iter()
            .min_by(|&&a, &&b| key(a).total_cmp(&key(b)))
            .unwrap();
        corners.sort_by_key(|&c| (c + n - first) % n);
    }

    let square = [
        Vector2::new(0.0, 0.0),
        Vector2::new(1.0, 0.0),
        Vector2::new(1.0, 1.0),
        Vector2::new(0.0, 1.0),
    ];
    let mut uv = vec![Vector2::zeros(); n];
    for side in 0..4 {
        let (c0, c1) = (corners[side], corners[(side + 1) % 4]);
        let len = (c1 + n - c0) % n;
        let side_len: f64 = (0..len).map(|i| seg[(c0 + i) % n]).sum();
        let mut acc = 0.0;
        for i in 0..len {
            let t = acc / side_len;
            uv[(c0 + i) % n] = square[side] * (1.0 - t) + square[(side + 1) % 4] * t;
            acc += seg[(c0 + i) % n];
        }
    }
    Ok(uv)
}

/// Solves the harmonic map with the given Dirichlet vertices.
/// Returns (uv, CG iterations, relative residual).
pub fn harmonic_map(mesh: &TriMesh, pinned: &[(usize, Vector2<f64>)]) -> (Vec<Vector2<f64>>, usize, f64) {
    let nv = mesh.vertices().len();
    let mut fixed: Vec<Option<Vector2<f64>>> = vec![None; nv];
    for &(v, p) in pinned {
        fixed[v] = Some(p);
    }
    let mut index = vec![usize::MAX; nv];
    let mut free = Vec::new();
    for v in 0..nv {
        if fixed[v].is_none() {
            index[v] = free.len();
            free.push(v);
        }
    }
    let mut uv: Vec<Vector2<f64>> = fixed.iter().map(|f| f.unwrap_or_else(Vector2::zeros)).collect();
    if free.is_empty() {
        return (uv, 0, 0.0);
    }

    let m = free.len();
    let mut lap = TripletBuilder::new(m);
    let mut rhs = vec![Vector2::zeros(); m];
    let verts = mesh.vertices();
    for f in mesh.faces() {
        for k in 0..3 {
            // Edge (i, j) opposite vertex o gets ½·cot of the angle at o.
            let (i, j, o) = (f[k], f[(k + 1) % 3], f[(k + 2) % 3]);
            let w = 0.5 * cot(&(verts[i] - verts[o]), &(verts[j] - verts[o]));
            for (a, b) in [(i, j), (j, i)] {
                if index[a] == usize::MAX {
                    continue;
                }
                lap.add(index[a], index[a], w);
                match fixed[b] {
                    Some(pb) => rhs[index[a]] += pb * w,
                    None => lap.add(index[a], index[b], -w),
                }
            }
        }
    }
    let lap = lap.build();
    let mut iters = 0;
    let mut res: f64 = 0.0;
    for c in 0..2 {
        let b: Vec<f64> = rhs.iter().map(|r| r[c]).collect();
        let mut x: Vec<f64> = vec![0.5; m];
        let rep = lap.solve_cg(&b, &mut x, CG_TOL, 20 * m + 100);
        iters = iters.max(rep.iterations);
        res = res.max(rep.relative_residual);
        for (k, &v) in free.iter().enumerate() {
            uv[v][c] = x[k];
        }
    }
    (uv, iters, res)
}

impl SurfaceChart {
    /// Harmonic chart onto the unit square.
    pub fn build(mesh: TriMesh) -> Result<Self, ChartError> {
        let boundary = mesh.disk_boundary()?;
        let buv = square_boundary(&mesh, &boundary)?;
        let pinned: Vec<_> = boundary.iter().copied().zip(buv).collect();
        let (uv, iters, res) = harmonic_map(&mesh, &pinned);
        Self::from_parts(mesh, uv, boundary, iters, res)
    }

    /// Chart with caller-supplied boundary positions (every boundary vertex must be pinned).
    pub fn with_boundary(mesh: TriMesh, pinned: &[(usize, Vector2<f64>)]) -> Result<Self, ChartError> {
        let boundary = mesh.disk_boundary()?;
        let (uv, iters, res) = harmonic_map(&mesh, pinned);
        Self::from_parts(mesh, uv, boundary, iters, res)
    }

    /// Assembles a chart from precomputed uv, validating injectivity.
    pub fn from_uv(mesh: TriMesh, uv: Vec<Vector2<f64>>) -> Result<Self, ChartError> {
        let boundary = mesh.disk_boundary()?;
        Self::from_parts(mesh, uv, boundary, 0, 0.0)
    }

    fn from_parts(
        mesh: TriMesh,
        uv: Vec<Vector2<f64>>,
        boundary: Vec<usize>,
        cg_iterations: usize,
        cg_residual: f64,
    ) -> Result<Self, ChartError> {
        let faces = mesh.faces();
        let areas: Vec<f64> = faces
            .iter()
            .map(|f| signed_area(&uv[f[0]], &uv[f[1]], &uv[f[2]]))
            .collect();
        let flipped: Vec<usize> = (0..faces.len()).filter(|&i| !(areas[i] > 0.0)).collect();
        if !flipped.is_empty() {
            return Err(ChartError::FlippedTriangles { count: flipped.len(), faces: flipped });
        }

        let mut tangents = vec![Vector3::zeros(); mesh.vertices().len()];
        let mut max_dist: f64 = 1.0;
        for (fi, f) in faces.iter().enumerate() {
            let jac = face_differential(&mesh, &uv, fi);
            let sv = jac.svd(false, false).singular_values;
            max_dist = max_dist.max(sv[0] / sv[1]);
            let t = jac.column(0).normalize() * mesh.face_area(fi);
            for &v in f {
                tangents[v] += t;
            }
        }
        let stats = ChartStats {
            max_conformal_distortion: max_dist,
            min_uv_area: areas.iter().copied().fold(f64::INFINITY, f64::min),
            cg_iterations,
            cg_residual,
        };
        let scale = mesh.area().sqrt();
        let locator = UvLocator::new(&uv, faces);
        Ok(Self { mesh, uv, boundary, tangents, scale, stats, locator })
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn uv(&self) -> &[Vector2<f64>] {
        &self.uv
    }

    pub fn boundary(&self) -> &[usize] {
        &self.boundary
    }

    pub fn stats(&self) -> &ChartStats {
        &self.stats
    }

    /// Metres per chart unit: square root of the surface area.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn uv_at(&self, face: usize, bary: &Vector3<f64>) -> Vector2<f64> {
        let f = self.mesh.faces()[face];
        self.uv[f[0]] * bary[0] + self.uv[f[1]] * bary[1] + self.uv[f[2]] * bary[2]
    }

    pub fn uv_signed_area(&self, face: usize) -> f64 {
        let f = self.mesh.faces()[face];
        signed_area(&self.uv[f[0]], &self.uv[f[1]], &self.uv[f[2]])
    }

    /// Interpolated direction of increasing s₁ (not normalised, not projected).
    pub fn tangent_at(&self, face: usize, bary: &Vector3<f64>) -> Vector3<f64> {
        let f = self.mesh.faces()[face];
        self.tangents[f[0]] * bary[0] + self.tangents[f[1]] * bary[1] + self.tangents[f[2]] * bary[2]
    }

    /// ∂x/∂(s₁, s₂) on a face.
    pub fn face_jacobian(&self, face: usize) -> Matrix3x2<f64> {
        face_differential(&self.mesh, &self.uv, face)
    }

    /// Maps a parameter-domain point to the surface point and interpolated normal.
    pub fn chart_to_surface(&self, s: &Vector2<f64>) -> Result<ChartPoint, ChartError> {
        let face_bary = self
            .locator
            .candidates(s)
            .iter()
            .filter_map(|&fi| {
                let f = self.mesh.faces()[fi];
                let b = barycentric_2d(s, &self.uv[f[0]], &self.uv[f[1]], &self.uv[f[2]]);
                (b.min() >= -LOCATE_TOL).then_some((fi, b))
            })
            .max_by(|a, b| a.1.min().total_cmp(&b.1.min()));
        let (face, bary) = face_bary.ok_or(ChartError::OutsideDomain(s.x, s.y))?;
        let bary = bary.map(|v| v.max(0.0));
        let bary = bary / bary.sum();
        let f = self.mesh.faces()[face];
        let v = self.mesh.vertices();
        let point = v[f[0]] * bary[0] + v[f[1]] * bary[1] + v[f[2]] * bary[2];
        let normal = self.mesh.interpolate_normal(face, &bary);
        Ok(ChartPoint { point, normal, face, bary })
    }
}

fn face_differential(mesh: &TriMesh, uv: &[Vector2<f64>], face: usize) -> Matrix3x2<f64> {
    let f = mesh.faces()[face];
    let v = mesh.vertices();
    let x = Matrix3x2::from_columns(&[v[f[1]] - v[f[0]], v[f[2]] - v[f[0]]]);
    let u = Matrix2::from_columns(&[uv[f[1]] - uv[f[0]], uv[f[2]] - uv[f[0]]]);
    x * u.try_inverse().unwrap_or_else(Matrix2::zeros)
}

pub fn barycentric_2d(p: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>, c: &Vector2<f64>) -> Vector3<f64> {
    let area = signed_area(a, b, c);
    let wa = signed_area(p, b, c) / area;
    let wb = signed_area(a, p, c) / area;
    Vector3::new(wa, wb, 1.0 - wa - wb)
}

impl UvLocator {
    fn new(uv: &[Vector2<f64>], faces: &[[usize; 3]]) -> Self {
        let res = ((faces.len() as f64).sqrt().ceil() as usize).clamp(1, 256);
        let mut cells = vec![Vec::new(); res * res];
        let cell = |x: f64| ((x * res as f64).floor().max(0.0) as usize).min(res - 1);
        for (fi, f) in faces.iter().enumerate() {
            let (mut lo, mut hi) = (uv[f[0]], uv[f[0]]);
            for &v in &f[1..] {
                lo = lo.inf(&uv[v]);
                hi = hi.sup(&uv[v]);
            }
            let pad = 1e-9;
            for j in cell(lo.y - pad)..=cell(hi.y + pad) {
                for i in cell(lo.x - pad)..=cell(hi.x + pad) {
                    cells[j * res + i].push(fi);
                }
            }
        }
        Self { res, cells }
    }

    fn candidates(&self, s: &Vector2<f64>) -> &[usize] {
        if !(s.x.is_finite() && s.y.is_finite()) {
            return &[];
        }
        let r = self.res as f64;
        let pad = 1e-9;
        if s.x < -pad || s.y < -pad || s.x > 1.0 + pad || s.y > 1.0 + pad {
            return &[];
        }
        let i = ((s.x * r).floor().max(0.0) as usize).min(self.res - 1);
        let j = ((s.y * r).floor().max(0.0) as usize).min(self.res - 1);
        &self.cells[j * self.res + i]
    }
}
