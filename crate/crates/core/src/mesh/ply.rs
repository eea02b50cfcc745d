//! ASCII PLY reading and writing (vertices, vertex normals, optional uv, triangles).

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Vector2, Vector3};

use super::{MeshError, TriMesh};

/// Serialises a mesh, optionally with per-vertex `u v` properties.
pub fn to_ply_string(mesh: &TriMesh, uv: Option<&[Vector2<f64>]>) -> String {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\ncomment usscan\n");
    let _ = writeln!(s, "element vertex {}", mesh.vertices().len());
    for p in ["x", "y", "z", "nx", "ny", "nz"] {
        let _ = writeln!(s, "property double {p}");
    }
    if uv.is_some() {
        s.push_str("property double u\nproperty double v\n");
    }
    let _ = writeln!(s, "element face {}", mesh.faces().len());
    s.push_str("property list uchar int vertex_indices\nend_header\n");
    for (i, (v, n)) in mesh.vertices().iter().zip(mesh.vertex_normals()).enumerate() {
        let _ = write!(s, "{} {} {} {} {} {}", v.x, v.y, v.z, n.x, n.y, n.z);
        if let Some(uv) = uv {
            let _ = write!(s, " {} {}", uv[i].x, uv[i].y);
        }
        s.push('\n');
    }
    for f in mesh.faces() {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    s
}

pub fn write_ply(path: &Path, mesh: &TriMesh, uv: Option<&[Vector2<f64>]>) -> Result<(), MeshError> {
    std::fs::write(path, to_ply_string(mesh, uv))?;
    Ok(())
}

/// Parsed PLY: the mesh plus uv if the file carried `u`/`v` vertex properties.
pub struct PlyData {
    pub mesh: TriMesh,
    pub uv: Option<Vec<Vector2<f64>>>,
}

pub fn parse_ply(text: &str) -> Result<PlyData, MeshError> {
    let err = |m: &str| MeshError::Ply(m.to_string());
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(err("missing magic"));
    }
    let mut n_vertices = None;
    let mut n_faces = None;
    let mut vertex_props: Vec<String> = Vec::new();
    let mut current = "";
    for line in lines.by_ref() {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", fmt, ..] if *fmt != "ascii" => return Err(err("only ascii PLY is supported")),
            ["element", "vertex", n] => {
                n_vertices = Some(n.parse::<usize>().map_err(|_| err("bad vertex count"))?);
                current = "vertex";
            }
            ["element", "face", n] => {
                n_faces = Some(n.parse::<usize>().map_err(|_| err("bad face count"))?);
                current = "face";
            }
            ["element", ..] => current = "other",
            ["property", "list", ..] => {}
            ["property", _, name] if current == "vertex" => vertex_props.push(name.to_string()),
            ["end_header"] => break,
            _ => {}
        }
    }
    let nv = n_vertices.ok_or_else(|| err("no vertex element"))?;
    let nf = n_faces.ok_or_else(|| err("no face element"))?;
    let col = |name: &str| vertex_props.iter().position(|p| p == name);
    let (ix, iy, iz) = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(err("vertex needs x y z")),
    };
    let uv_cols = col("u").zip(col("v"));

    let mut vertices = Vec::with_capacity(nv);
    let mut uv = Vec::new();
    for _ in 0..nv {
        let line = lines.next().ok_or_else(|| err("truncated vertex list"))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| err("bad vertex value")))
            .collect::<Result<_, _>>()?;
        if vals.len() < vertex_props.len() {
            return Err(err("short vertex line"));
        }
        vertices.push(Vector3::new(vals[ix], vals[iy], vals[iz]));
        if let Some((iu, iv)) = uv_cols {
            uv.push(Vector2::new(vals[iu], vals[iv]));
        }
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let line = lines.next().ok_or_else(|| err("truncated face list"))?;
        let idx: Vec<usize> = line
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|_| err("bad face index")))
            .collect::<Result<_, _>>()?;
        if idx.first() != Some(&3) || idx.len() != 4 {
            return Err(err("only triangular faces are supported"));
        }
        faces.push([idx[1], idx[2], idx[3]]);
    }
    Ok(PlyData {
        mesh: TriMesh::new(vertices, faces)?,
        uv: uv_cols.map(|_| uv),
    })
}

pub fn read_ply(path: &Path) -> Result<PlyData, MeshError> {
    parse_ply(&std::fs::read_to_string(path)?)
}
