//! Mesh generators for tests, phantoms and demos.

use std::f64::consts::{FRAC_PI_2, TAU};

use nalgebra::Vector3;

use super::TriMesh;

/// Regular heightfield grid centred at the origin with `nx × ny` cells, two
/// triangles per cell, wound counter-clockwise seen from +z.
pub fn grid_mesh(nx: usize, ny: usize, size_x: f64, size_y: f64, height: impl Fn(f64, f64) -> f64) -> TriMesh {
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            let x = -0.5 * size_x + size_x * i as f64 / nx as f64;
            let y = -0.5 * size_y + size_y * j as f64 / ny as f64;
            vertices.push(Vector3::new(x, y, height(x, y)));
        }
    }
    TriMesh::new(vertices, grid_faces(nx, ny)).expect("grid mesh is valid")
}

pub fn grid_faces(nx: usize, ny: usize) -> Vec<[usize; 3]> {
    let idx = |i: usize, j: usize| j * (nx + 1) + i;
    let mut faces = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (v00, v10, v01, v11) = (idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1));
            faces.push([v00, v10, v11]);
            faces.push([v00, v11, v01]);
        }
    }
    faces
}

/// Upper hemisphere of `radius` centred at the origin; the equator is the boundary.
pub fn hemisphere_mesh(radius: f64, rings: usize, segments: usize) -> TriMesh {
    let mut vertices = vec![Vector3::new(0.0, 0.0, radius)];
    for k in 1..=rings {
        let theta = FRAC_PI_2 * k as f64 / rings as f64;
        for s in 0..segments {
            let phi = TAU * s as f64 / segments as f64;
            vertices.push(Vector3::new(
                radius * theta.sin() * phi.cos(),
                radius * theta.sin() * phi.sin(),
                radius * theta.cos(),
            ));
        }
    }
    let ring = |k: usize, s: usize| 1 + (k - 1) * segments + s % segments;
    let mut faces = Vec::new();
    for s in 0..segments {
        faces.push([0, ring(1, s), ring(1, s + 1)]);
    }
    for k in 1..rings {
        for s in 0..segments {
            let (a, b, c, d) = (ring(k, s), ring(k + 1, s), ring(k + 1, s + 1), ring(k, s + 1));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    TriMesh::new(vertices, faces).expect("hemisphere mesh is valid")
}
