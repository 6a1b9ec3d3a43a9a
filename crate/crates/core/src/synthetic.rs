//! Parametric shape families with known variation factors.
//!
//! Every shape of a family shares one icosphere vertex layout, so vertex `i`
//! is a ground-truth correspondence across the cohort and each family is
//! affine in its latent factors.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::io::save_mesh_ply;
use crate::geometry::{dot, Cohort, Point3, Shape, TriangleMesh};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Latents are the semi-axes along x, y, z.
    Ellipsoid,
    /// Sphere with Gaussian bumps at fixed sites; latents are bump heights.
    BumpedSphere,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortSpec {
    pub family: Family,
    pub n_shapes: usize,
    pub latent_dims: usize,
    /// Per-latent `[lo, hi]` in mm; family defaults when empty.
    #[serde(default)]
    pub latent_ranges: Vec<[f64; 2]>,
    /// Icosphere subdivision level (3 gives 642 vertices).
    #[serde(default = "default_subdivisions")]
    pub subdivisions: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_subdivisions() -> usize {
    3
}

/// Radius of the bumped-sphere base and bump width (mm).
const SPHERE_RADIUS: f64 = 25.0;
const BUMP_WIDTH: f64 = 0.45;
const MAX_BUMPS: usize = 12;

impl CohortSpec {
    pub fn ellipsoids(n_shapes: usize, seed: u64) -> Self {
        Self {
            family: Family::Ellipsoid,
            n_shapes,
            latent_dims: 3,
            latent_ranges: Vec::new(),
            subdivisions: default_subdivisions(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dims == 0 {
            return Err(Error::invalid("latent_dims must be at least 1"));
        }
        if self.n_shapes < self.latent_dims + 2 {
            return Err(Error::invalid(format!(
                "n_shapes = {} must be at least latent_dims + 2 = {}",
                self.n_shapes,
                self.latent_dims + 2
            )));
        }
        let max = match self.family {
            Family::Ellipsoid => 3,
            Family::BumpedSphere => MAX_BUMPS,
        };
        if self.latent_dims > max {
            return Err(Error::invalid(format!(
                "{:?} supports at most {max} latent factors",
                self.family
            )));
        }
        if !self.latent_ranges.is_empty() && self.latent_ranges.len() != self.latent_dims {
            return Err(Error::invalid(format!(
                "{} latent ranges given for {} latent factors",
                self.latent_ranges.len(),
                self.latent_dims
            )));
        }
        if self.latent_ranges.iter().any(|r| !(r[0] <= r[1])) {
            return Err(Error::invalid("latent range must satisfy lo <= hi"));
        }
        if self.family == Family::Ellipsoid && self.ranges().iter().any(|r| r[0] <= 0.0) {
            return Err(Error::invalid("ellipsoid semi-axes must be positive"));
        }
        if self.family == Family::BumpedSphere
            && self.ranges().iter().map(|r| r[0].min(0.0)).sum::<f64>() <= -SPHERE_RADIUS
        {
            return Err(Error::invalid("bump depths would invert the sphere"));
        }
        if self.subdivisions > 6 {
            return Err(Error::invalid("subdivisions above 6 are not supported"));
        }
        Ok(())
    }

    /// Effective latent ranges.
    pub fn ranges(&self) -> Vec<[f64; 2]> {
        if !self.latent_ranges.is_empty() {
            return self.latent_ranges.clone();
        }
        let defaults: &[[f64; 2]] = match self.family {
            Family::Ellipsoid => &[[20.0, 40.0], [15.0, 30.0], [10.0, 20.0]],
            Family::BumpedSphere => &[[-4.0, 8.0]; MAX_BUMPS],
        };
        defaults[..self.latent_dims].to_vec()
    }
}

/// Unit icosphere: subdivided icosahedron with vertices projected to the sphere.
pub fn icosphere(subdivisions: usize) -> (Vec<Point3>, Vec<[usize; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Point3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(unit)
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, verts: &mut Vec<Point3>| {
            *cache.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let (p, q) = (verts[a], verts[b]);
                verts.push(unit(&[p[0] + q[0], p[1] + q[1], p[2] + q[2]]));
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    (verts, faces)
}

fn unit(p: &Point3) -> Point3 {
    let n = dot(p, p).sqrt();
    [p[0] / n, p[1] / n, p[2] / n]
}

/// Fixed, well-spread bump sites on the unit sphere (Fibonacci lattice).
fn bump_sites(count: usize) -> Vec<Point3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).sqrt();
            let th = golden * i as f64;
            [r * th.cos(), r * th.sin(), z]
        })
        .collect()
}

/// Surface of `family` at latent vector `z` over the unit-sphere layout.
pub fn shape_vertices(family: Family, sphere: &[Point3], z: &[f64]) -> Vec<Point3> {
    match family {
        Family::Ellipsoid => {
            let mut axes = [0.0; 3];
            axes[..z.len()].copy_from_slice(z);
            sphere
                .iter()
                .map(|v| [axes[0] * v[0], axes[1] * v[1], axes[2] * v[2]])
                .collect()
        }
        Family::BumpedSphere => {
            let sites = bump_sites(MAX_BUMPS);
            sphere
                .iter()
                .map(|v| {
                    let r = SPHERE_RADIUS
                        + z.iter()
                            .zip(&sites)
                            .map(|(a, c)| {
                                let d2 = crate::geometry::dist2(v, c);
                                a * (-d2 / (2.0 * BUMP_WIDTH * BUMP_WIDTH)).exp()
                            })
                            .sum::<f64>();
                    [r * v[0], r * v[1], r * v[2]]
                })
                .collect()
        }
    }
}

/// A generated cohort with its ground-truth factors (one row per shape).
#[derive(Debug, Clone)]
pub struct SyntheticCohort {
    pub spec: CohortSpec,
    pub cohort: Cohort,
    pub latents: Vec<Vec<f64>>,
}

pub fn generate_cohort(spec: &CohortSpec) -> Result<SyntheticCohort> {
    spec.validate()?;
    let (sphere, faces) = icosphere(spec.subdivisions);
    let ranges = spec.ranges();
    let mut r = rng::derived(spec.seed, 0xc0407);
    let mut shapes = Vec::with_capacity(spec.n_shapes);
    let mut latents = Vec::with_capacity(spec.n_shapes);
    for i in 0..spec.n_shapes {
        let z: Vec<f64> = ranges
            .iter()
            .map(|&[lo, hi]| if lo == hi { lo } else { r.random_range(lo..hi) })
            .collect();
        // unused ellipsoid axes sit at the first range's midpoint
        let mut full = z.clone();
        if spec.family == Family::Ellipsoid {
            let mid = 0.5 * (ranges[0][0] + ranges[0][1]);
            full.resize(3, mid);
        }
        let mesh = TriangleMesh::new(shape_vertices(spec.family, &sphere, &full), faces.clone())?;
        shapes.push(Shape::from_mesh(format!("shape_{i:04}"), mesh)?);
        latents.push(z);
    }
    Ok(SyntheticCohort {
        spec: spec.clone(),
        cohort: Cohort::new(shapes),
        latents,
    })
}

/// Writes one PLY per shape plus `latents.csv` (`id,z0,z1,...`).
pub fn write_cohort(dir: &Path, synth: &SyntheticCohort) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut csv = String::from("id");
    for k in 0..synth.spec.latent_dims {
        let _ = write!(csv, ",z{k}");
    }
    csv.push('\n');
    for (shape, z) in synth.cohort.shapes.iter().zip(&synth.latents) {
        let mesh = shape.mesh.as_ref().expect("generated shapes carry meshes");
        save_mesh_ply(dir.join(format!("{}.ply", shape.id)), mesh)?;
        csv.push_str(&shape.id);
        for v in z {
            let _ = write!(csv, ",{v}");
        }
        csv.push('\n');
    }
    let path = dir.join("latents.csv");
    std::fs::write(&path, csv).map_err(|e| Error::io(path, e))
}
