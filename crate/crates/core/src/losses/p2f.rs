use crate::error::{Error, Result};
use crate::geometry::{add, dist2, dot, scale, sub, Point3, TriangleMesh};

/// Closest point to `p` on triangle `(a, b, c)`, covering the face interior,
/// the three edges and the three vertices.
pub fn closest_point_on_triangle(p: &Point3, a: &Point3, b: &Point3, c: &Point3) -> Point3 {
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);
    let d1 = dot(&ab, &ap);
    let d2 = dot(&ac, &ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = sub(p, b);
    let d3 = dot(&ab, &bp);
    let d4 = dot(&ac, &bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return add(a, &scale(&ab, v));
    }
    let cp = sub(p, c);
    let d5 = dot(&ab, &cp);
    let d6 = dot(&ac, &cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return add(a, &scale(&ac, w));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return add(b, &scale(&sub(c, b), w));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    add(a, &add(&scale(&ab, v), &scale(&ac, w)))
}

pub fn point_triangle_distance(p: &Point3, tri: &[Point3; 3]) -> f64 {
    dist2(p, &closest_point_on_triangle(p, &tri[0], &tri[1], &tri[2])).sqrt()
}

/// Unsigned distance from each point to the closest face of `mesh`.
pub fn point_to_face_distance(points: &[Point3], mesh: &TriangleMesh) -> Result<Vec<f64>> {
    if mesh.faces().is_empty() {
        return Err(Error::InvalidMesh("mesh has no faces".into()));
    }
    let tris: Vec<[Point3; 3]> = (0..mesh.faces().len()).map(|f| mesh.triangle(f)).collect();
    Ok(points
        .iter()
        .map(|p| {
            tris.iter()
                .map(|t| dist2(p, &closest_point_on_triangle(p, &t[0], &t[1], &t[2])))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri_mesh() -> TriangleMesh {
        TriangleMesh::new(
            vec![[0.0, 0.0, 0.0], [4.0, 0.0, 0.0], [0.0, 4.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn on_face_and_above_interior() {
        let m = tri_mesh();
        let d = point_to_face_distance(&[[1.0, 1.0, 0.0], [1.0, 1.0, 2.5]], &m).unwrap();
        assert_eq!(d[0], 0.0);
        assert!((d[1] - 2.5).abs() < 1e-15);
    }

    #[test]
    fn beyond_edge_and_vertex() {
        let m = tri_mesh();
        // beyond the hypotenuse x + y = 4 at (3,3,0): distance to the line is sqrt(2)
        let d = point_to_face_distance(&[[3.0, 3.0, 0.0], [-3.0, -4.0, 0.0]], &m).unwrap();
        assert!((d[0] - 2f64.sqrt()).abs() < 1e-12);
        assert!((d[1] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn empty_mesh_is_error() {
        let m = TriangleMesh::new(vec![[0.0; 3]], vec![]).unwrap();
        assert!(point_to_face_distance(&[[0.0; 3]], &m).is_err());
    }
}
