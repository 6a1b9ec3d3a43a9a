//! Point-to-point ICP with Horn's closed-form (unit quaternion) rigid solve.

use nalgebra::{Matrix3, Matrix4, SymmetricEigen, UnitQuaternion, Quaternion, Vector3};

use super::{centroid, dist2, Point3, PointCloud};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        let v = self.rotation * Vector3::new(p[0], p[1], p[2]) + self.translation;
        [v.x, v.y, v.z]
    }

    pub fn apply_all(&self, pts: &[Point3]) -> Vec<Point3> {
        pts.iter().map(|p| self.apply(p)).collect()
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::new(rt, -(rt * self.translation))
    }

    /// Rotation angle in radians.
    pub fn angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos()
    }

    pub fn is_proper_rotation(&self, tol: f64) -> bool {
        let r = &self.rotation;
        (r * r.transpose() - Matrix3::identity()).abs().max() < tol
            && (r.determinant() - 1.0).abs() < tol
    }
}

fn to_vec(p: &Point3) -> Vector3<f64> {
    Vector3::new(p[0], p[1], p[2])
}

/// Least-squares rigid map taking `from[i]` onto `to[i]`.
pub(crate) fn horn_solve(from: &[Point3], to: &[Point3]) -> RigidTransform {
    let ca = to_vec(&centroid(from));
    let cb = to_vec(&centroid(to));
    let mut s = Matrix3::zeros();
    for (a, b) in from.iter().zip(to) {
        s += (to_vec(a) - ca) * (to_vec(b) - cb).transpose();
    }
    let (sxx, sxy, sxz) = (s[(0, 0)], s[(0, 1)], s[(0, 2)]);
    let (syx, syy, syz) = (s[(1, 0)], s[(1, 1)], s[(1, 2)]);
    let (szx, szy, szz) = (s[(2, 0)], s[(2, 1)], s[(2, 2)]);
    #[rustfmt::skip]
    let n = Matrix4::new(
        sxx + syy + szz, syz - szy,       szx - sxz,        sxy - syx,
        syz - szy,       sxx - syy - szz, sxy + syx,        szx + sxz,
        szx - sxz,       sxy + syx,       -sxx + syy - szz, syz + szy,
        sxy - syx,       szx + sxz,       syz + szy,        -sxx - syy + szz,
    );
    let eig = SymmetricEigen::new(n);
    let best = eig.eigenvalues.imax();
    let q = eig.eigenvectors.column(best);
    let rot = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
    let r = *rot.to_rotation_matrix().matrix();
    RigidTransform::new(r, cb - r * ca)
}

fn check_conditioning(points: &[Point3]) -> Result<()> {
    let c = to_vec(&centroid(points));
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = to_vec(p) - c;
        cov += d * d.transpose();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if ev[0] <= f64::EPSILON || ev[1] <= 1e-10 * ev[0] {
        return Err(Error::IllConditioned(
            "source points are coincident or collinear".into(),
        ));
    }
    Ok(())
}

fn nearest(p: &Point3, target: &[Point3]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, t) in target.iter().enumerate() {
        let d = dist2(p, t);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Rigidly aligns `source` onto `target`.
///
/// Starts from the centroid offset and alternates nearest-neighbor matching
/// with a closed-form solve until the mean squared residual improves by less
/// than `tol` or `max_iters` is reached.
pub fn icp_rigid_align(
    source: &PointCloud,
    target: &PointCloud,
    max_iters: usize,
    tol: f64,
) -> Result<RigidTransform> {
    let src = source.points();
    let tgt = target.points();
    check_conditioning(src)?;

    let mut xf = RigidTransform::new(
        Matrix3::identity(),
        to_vec(&centroid(tgt)) - to_vec(&centroid(src)),
    );
    let mut prev_mse = f64::INFINITY;
    let mut matched = vec![[0.0; 3]; src.len()];
    for _ in 0..max_iters {
        let mut mse = 0.0;
        for (m, p) in matched.iter_mut().zip(src) {
            let (j, d) = nearest(&xf.apply(p), tgt);
            *m = tgt[j];
            mse += d;
        }
        mse /= src.len() as f64;
        if prev_mse - mse < tol {
            break;
        }
        prev_mse = mse;
        xf = horn_solve(src, &matched);
    }
    Ok(xf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use rand::Rng;

    fn blob(n: usize, seed: u64) -> PointCloud {
        let mut rng = crate::rng::seeded(seed);
        let pts = (0..n)
            .map(|_| {
                [
                    rng.random_range(-30.0..30.0),
                    rng.random_range(-15.0..15.0),
                    rng.random_range(-6.0..6.0),
                ]
            })
            .collect();
        PointCloud::new(pts).unwrap()
    }

    #[test]
    fn identity_is_fixed_point() {
        let c = blob(200, 1);
        let xf = icp_rigid_align(&c, &c, 50, 1e-12).unwrap();
        assert!((xf.rotation - Matrix3::identity()).abs().max() < 1e-6);
        assert!(xf.translation.norm() < 1e-6);
    }

    #[test]
    fn pure_translation_is_recovered() {
        let target = blob(200, 2);
        let source = PointCloud::new(
            target.points().iter().map(|p| [p[0] + 5.0, p[1], p[2]]).collect(),
        )
        .unwrap();
        let xf = icp_rigid_align(&source, &target, 50, 1e-12).unwrap();
        assert!((xf.translation - Vector3::new(-5.0, 0.0, 0.0)).norm() < 1e-6);
        assert!((xf.rotation - Matrix3::identity()).abs().max() < 1e-6);
    }

    #[test]
    fn rotation_about_z_is_recovered() {
        let target = blob(300, 3);
        let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), 10f64.to_radians());
        let known = RigidTransform::new(*rot.matrix(), Vector3::new(1.0, -2.0, 0.5));
        let source = PointCloud::new(known.apply_all(target.points())).unwrap();
        let xf = icp_rigid_align(&source, &target, 100, 1e-14).unwrap();
        // xf should invert `known`
        let residual = xf.rotation * known.rotation;
        let err = RigidTransform::new(residual, Vector3::zeros()).angle();
        assert!(err < 1e-3, "angle error {err}");
        assert!(xf.is_proper_rotation(1e-6));
    }

    #[test]
    fn collinear_source_is_ill_conditioned() {
        let line = PointCloud::new((0..10).map(|i| [i as f64, 2.0 * i as f64, 0.0]).collect())
            .unwrap();
        let target = blob(20, 4);
        assert!(matches!(
            icp_rigid_align(&line, &target, 10, 1e-9),
            Err(Error::IllConditioned(_))
        ));
        let single = PointCloud::new(vec![[1.0, 1.0, 1.0]; 5]).unwrap();
        assert!(icp_rigid_align(&single, &target, 10, 1e-9).is_err());
    }

    #[test]
    fn horn_recovers_exact_pairs() {
        let a = blob(50, 5);
        let rot = Rotation3::from_euler_angles(0.3, -0.7, 1.1);
        let known = RigidTransform::new(*rot.matrix(), Vector3::new(3.0, 4.0, -1.0));
        let b = known.apply_all(a.points());
        let xf = horn_solve(a.points(), &b);
        assert!((xf.rotation - known.rotation).abs().max() < 1e-10);
        assert!((xf.translation - known.translation).norm() < 1e-9);
    }
}
