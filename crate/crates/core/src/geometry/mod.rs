//! Shape containers, I/O, rigid alignment, normalization, sampling and
//! neighbor queries.

mod cohort;
mod icp;
pub mod io;
mod sampling;

pub use cohort::{
    align_cohort, denormalize, normalize_cohort, normalize_points, Cohort, NormalizationParams,
    Shape, Split,
};
pub use icp::{icp_rigid_align, RigidTransform};
pub use sampling::{farthest_point_sample, knn_indices, knn_indices_flat, random_subsample};

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

#[inline]
pub fn sub(a: &Point3, b: &Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: &Point3, b: &Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: &Point3, s: f64) -> Point3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: &Point3, b: &Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: &Point3, b: &Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn dist2(a: &Point3, b: &Point3) -> f64 {
    let d = sub(a, b);
    dot(&d, &d)
}

pub fn centroid(points: &[Point3]) -> Point3 {
    let n = points.len().max(1) as f64;
    let mut c = [0.0; 3];
    for p in points {
        for a in 0..3 {
            c[a] += p[a];
        }
    }
    scale(&c, 1.0 / n)
}

/// Axis-aligned bounding box as `(min, max)`.
pub fn bounding_box(points: &[Point3]) -> (Point3, Point3) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    (lo, hi)
}

pub fn bounding_box_diagonal(points: &[Point3]) -> f64 {
    let (lo, hi) = bounding_box(points);
    dist2(&lo, &hi).sqrt()
}

/// An unordered set of 3D points.
///
/// Coordinates are in millimetres unless `normalized` is set, in which case
/// every coordinate lies in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    normalized: bool,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        Self::with_flag(points, false)
    }

    pub fn normalized(points: Vec<Point3>) -> Result<Self> {
        Self::with_flag(points, true)
    }

    fn with_flag(points: Vec<Point3>, normalized: bool) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("point cloud must contain at least one point"));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(format!("point {i} has a non-finite coordinate")));
        }
        if normalized {
            // small slack for round-off from the affine map
            let bound = 1.0 + 1e-9;
            if let Some(i) = points.iter().position(|p| p.iter().any(|v| v.abs() > bound)) {
                return Err(Error::invalid(format!(
                    "normalized point {i} lies outside [-1, 1]"
                )));
            }
        }
        Ok(Self { points, normalized })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    pub fn count(&self) -> usize {
        self.points.len()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let pts = indices.iter().map(|&i| self.points[i]).collect();
        Self::with_flag(pts, self.normalized)
    }
}

/// Triangle surface mesh in millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Point3>,
    faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Point3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        if let Some(i) = vertices.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidMesh(format!("vertex {i} is not finite")));
        }
        for (fi, f) in faces.iter().enumerate() {
            if let Some(&bad) = f.iter().find(|&&v| v >= n) {
                return Err(Error::InvalidMesh(format!(
                    "face {fi} references vertex {bad} but the mesh has {n} vertices"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!(
                    "face {fi} is degenerate ({} {} {})",
                    f[0], f[1], f[2]
                )));
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn triangle(&self, face: usize) -> [Point3; 3] {
        let f = self.faces[face];
        [self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]]
    }

    /// Applies `f` to every vertex; connectivity is untouched.
    pub fn map_vertices(&self, f: impl Fn(&Point3) -> Point3) -> Self {
        Self {
            vertices: self.vertices.iter().map(f).collect(),
            faces: self.faces.clone(),
        }
    }
}

/// The mesh vertices as an (unordered) point cloud, duplicates retained.
pub fn mesh_vertices_as_cloud(mesh: &TriangleMesh) -> Result<PointCloud> {
    PointCloud::new(mesh.vertices().to_vec())
}
