use nalgebra::Vector3;

/// Closest point on a triangle with its barycentric coordinates.
/// Edge and vertex regions report exact zeros in the unused coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrianglePoint {
    pub point: Vector3<f64>,
    pub bary: Vector3<f64>,
}

/// Voronoi-region walk over the triangle's vertices, edges and face
/// (Ericson, Real-Time Collision Detection, 5.1.5).
pub fn closest_point_on_triangle(
    p: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
) -> TrianglePoint {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return TrianglePoint { point: *a, bary: Vector3::new(1.0, 0.0, 0.0) };
    }

    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return TrianglePoint { point: *b, bary: Vector3::new(0.0, 1.0, 0.0) };
    }

    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return TrianglePoint { point: a + ab * v, bary: Vector3::new(1.0 - v, v, 0.0) };
    }

    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return TrianglePoint { point: *c, bary: Vector3::new(0.0, 0.0, 1.0) };
    }

    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return TrianglePoint { point: a + ac * w, bary: Vector3::new(1.0 - w, 0.0, w) };
    }

    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return TrianglePoint { point: b + (c - b) * w, bary: Vector3::new(0.0, 1.0 - w, w) };
    }

    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    TrianglePoint { point: a + ab * v + ac * w, bary: Vector3::new(1.0 - v - w, v, w) }
}
