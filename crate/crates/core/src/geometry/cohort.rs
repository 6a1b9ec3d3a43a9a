use serde::{Deserialize, Serialize};

use super::{bounding_box, centroid, dist2, icp_rigid_align, Point3, PointCloud, TriangleMesh};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    #[default]
    Unassigned,
}

/// One member of a cohort.
///
/// `surface` is the complete point set (mesh vertices) used as the
/// reconstruction target; `input` holds a corrupted copy when a corruption
/// protocol has been applied, otherwise inputs are drawn from `surface`.
#[derive(Debug, Clone, PartialEq)]
pub struct Shape {
    pub id: String,
    pub surface: PointCloud,
    pub mesh: Option<TriangleMesh>,
    pub input: Option<PointCloud>,
    pub split: Split,
}

impl Shape {
    pub fn from_mesh(id: impl Into<String>, mesh: TriangleMesh) -> Result<Self> {
        Ok(Self {
            id: id.into(),
            surface: super::mesh_vertices_as_cloud(&mesh)?,
            mesh: Some(mesh),
            input: None,
            split: Split::Unassigned,
        })
    }

    pub fn from_cloud(id: impl Into<String>, cloud: PointCloud) -> Self {
        Self {
            id: id.into(),
            surface: cloud,
            mesh: None,
            input: None,
            split: Split::Unassigned,
        }
    }

    /// The cloud network inputs are drawn from.
    pub fn input_cloud(&self) -> &PointCloud {
        self.input.as_ref().unwrap_or(&self.surface)
    }

    fn map_points(&self, f: &impl Fn(&Point3) -> Point3, normalized: bool) -> Result<Self> {
        let remap = |c: &PointCloud| -> Result<PointCloud> {
            let pts = c.points().iter().map(f).collect();
            if normalized {
                PointCloud::normalized(pts)
            } else {
                PointCloud::new(pts)
            }
        };
        Ok(Self {
            id: self.id.clone(),
            surface: remap(&self.surface)?,
            mesh: self.mesh.as_ref().map(|m| m.map_vertices(f)),
            input: self.input.as_ref().map(remap).transpose()?,
            split: self.split,
        })
    }
}

/// Affine map `x ↦ (x − center) · scale` into the unit box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub center: Point3,
    pub scale: f64,
}

impl NormalizationParams {
    pub fn identity() -> Self {
        Self {
            center: [0.0; 3],
            scale: 1.0,
        }
    }

    pub fn forward(&self, p: &Point3) -> Point3 {
        [
            (p[0] - self.center[0]) * self.scale,
            (p[1] - self.center[1]) * self.scale,
            (p[2] - self.center[2]) * self.scale,
        ]
    }

    pub fn inverse(&self, p: &Point3) -> Point3 {
        [
            p[0] / self.scale + self.center[0],
            p[1] / self.scale + self.center[1],
            p[2] / self.scale + self.center[2],
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Cohort {
    pub shapes: Vec<Shape>,
    /// Set once the cohort has been normalized.
    pub normalization: Option<NormalizationParams>,
}

impl Cohort {
    pub fn new(shapes: Vec<Shape>) -> Self {
        Self {
            shapes,
            normalization: None,
        }
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Shape> {
        self.shapes.iter().filter(move |s| s.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn get(&self, id: &str) -> Option<&Shape> {
        self.shapes.iter().find(|s| s.id == id)
    }
}

/// Computes one cohort-wide center and scale and maps every shape into `[-1, 1]`.
///
/// The box is taken over all points of all shapes (surfaces and corrupted
/// inputs) so that every stored cloud satisfies the normalized invariant;
/// relative sizes between shapes are preserved.
pub fn normalize_cohort(cohort: &Cohort) -> Result<(Cohort, NormalizationParams)> {
    if cohort.is_empty() {
        return Err(Error::invalid("cannot normalize an empty cohort"));
    }
    if cohort.normalization.is_some() {
        return Err(Error::invalid("cohort is already normalized"));
    }
    let mut all: Vec<Point3> = Vec::new();
    for s in &cohort.shapes {
        all.extend_from_slice(s.surface.points());
        if let Some(inp) = &s.input {
            all.extend_from_slice(inp.points());
        }
    }
    let (lo, hi) = bounding_box(&all);
    let center = [
        0.5 * (lo[0] + hi[0]),
        0.5 * (lo[1] + hi[1]),
        0.5 * (lo[2] + hi[2]),
    ];
    let extent = all
        .iter()
        .flat_map(|p| (0..3).map(move |a| (p[a] - center[a]).abs()))
        .fold(0.0f64, f64::max);
    if extent <= 0.0 {
        return Err(Error::IllConditioned(
            "cohort has zero spatial extent".into(),
        ));
    }
    let params = NormalizationParams {
        center,
        scale: 1.0 / extent,
    };
    let f = |p: &Point3| params.forward(p);
    let shapes = cohort
        .shapes
        .iter()
        .map(|s| s.map_points(&f, true))
        .collect::<Result<_>>()?;
    Ok((
        Cohort {
            shapes,
            normalization: Some(params),
        },
        params,
    ))
}

pub fn normalize_points(points: &[Point3], params: &NormalizationParams) -> Vec<Point3> {
    points.iter().map(|p| params.forward(p)).collect()
}

/// Exact inverse of the normalization map (back to millimetres).
pub fn denormalize(points: &[Point3], params: &NormalizationParams) -> Vec<Point3> {
    points.iter().map(|p| params.inverse(p)).collect()
}

/// Rigidly aligns every shape to a reference with ICP.
///
/// The reference is the shape whose vertex centroid lies closest to the mean
/// centroid; it is left in place. Returns the aligned cohort and the index of
/// the reference.
pub fn align_cohort(cohort: &Cohort, max_iters: usize, tol: f64) -> Result<(Cohort, usize)> {
    if cohort.is_empty() {
        return Err(Error::invalid("cannot align an empty cohort"));
    }
    if cohort.normalization.is_some() {
        return Err(Error::invalid("align before normalizing"));
    }
    let centroids: Vec<Point3> = cohort
        .shapes
        .iter()
        .map(|s| centroid(s.surface.points()))
        .collect();
    let mean = centroid(&centroids);
    let reference = centroids
        .iter()
        .enumerate()
        .min_by(|a, b| dist2(a.1, &mean).total_cmp(&dist2(b.1, &mean)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let target = &cohort.shapes[reference].surface;
    let mut shapes = Vec::with_capacity(cohort.len());
    for (i, s) in cohort.shapes.iter().enumerate() {
        if i == reference {
            shapes.push(s.clone());
            continue;
        }
        let xf = icp_rigid_align(&s.surface, target, max_iters, tol)?;
        shapes.push(s.map_points(&|p| xf.apply(p), false)?);
    }
    Ok((Cohort::new(shapes), reference))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(half: f64, offset: Point3) -> Shape {
        let mut pts = Vec::new();
        for i in 0..8 {
            pts.push([
                offset[0] + if i & 1 == 0 { -half } else { half },
                offset[1] + if i & 2 == 0 { -half } else { half },
                offset[2] + if i & 4 == 0 { -half } else { half },
            ]);
        }
        Shape::from_cloud(format!("cube{half}"), PointCloud::new(pts).unwrap())
    }

    #[test]
    fn unit_cube_is_unchanged() {
        let c = Cohort::new(vec![cube(1.0, [0.0; 3])]);
        let (n, p) = normalize_cohort(&c).unwrap();
        assert_eq!(p.scale, 1.0);
        assert_eq!(p.center, [0.0; 3]);
        assert_eq!(n.shapes[0].surface.points(), c.shapes[0].surface.points());
        assert!(n.shapes[0].surface.is_normalized());
    }

    #[test]
    fn fifty_mm_span_scales_by_one_fiftieth() {
        let c = Cohort::new(vec![cube(50.0, [0.0; 3]), cube(10.0, [0.0; 3])]);
        let (n, p) = normalize_cohort(&c).unwrap();
        assert!((p.scale - 1.0 / 50.0).abs() < 1e-15);
        for s in &n.shapes {
            for q in s.surface.points() {
                assert!(q.iter().all(|v| v.abs() <= 1.0));
            }
        }
        // relative size preserved: small cube keeps a fifth of the extent
        let small = n.shapes[1].surface.points()[7];
        assert!((small[0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn empty_cohort_is_an_error() {
        assert!(normalize_cohort(&Cohort::default()).is_err());
    }

    #[test]
    fn denormalize_inverts_normalize() {
        let c = Cohort::new(vec![cube(12.5, [3.0, -7.0, 40.0]), cube(4.0, [1.0, 2.0, 3.0])]);
        let (n, p) = normalize_cohort(&c).unwrap();
        for (a, b) in c.shapes.iter().zip(&n.shapes) {
            let back = denormalize(b.surface.points(), &p);
            for (x, y) in a.surface.points().iter().zip(&back) {
                for k in 0..3 {
                    assert!((x[k] - y[k]).abs() <= 1e-9 * x[k].abs().max(1.0));
                }
            }
        }
        assert_eq!(denormalize(&[[0.0; 3]], &p)[0], p.center);
    }

    #[test]
    fn composition_with_known_scale() {
        let p = NormalizationParams {
            center: [1.0, 2.0, 3.0],
            scale: 2.0,
        };
        // forward then inverse, and inverse of (1,1,1) = center + 1/scale
        let q = p.inverse(&[1.0, 1.0, 1.0]);
        assert_eq!(q, [1.5, 2.5, 3.5]);
        assert_eq!(p.forward(&q), [1.0, 1.0, 1.0]);
    }
}
