use crate::error::{Error, Result};
use crate::geometry::{dist2, sub, Point3};

/// Index of the nearest point in `set` (lowest index on ties) and its squared distance.
#[inline]
pub(crate) fn nearest(p: &Point3, set: &[Point3]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, s) in set.iter().enumerate() {
        let d = dist2(p, s);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn check_nonempty(c: &[Point3], s: &[Point3]) -> Result<()> {
    if c.is_empty() || s.is_empty() {
        return Err(Error::invalid("chamfer distance of an empty set"));
    }
    Ok(())
}

/// Symmetric squared Chamfer distance: the two directed mean
/// squared nearest-neighbor distances, summed.
pub fn chamfer_distance(c: &[Point3], s: &[Point3]) -> Result<f64> {
    check_nonempty(c, s)?;
    let fwd: f64 = c.iter().map(|p| nearest(p, s).1).sum::<f64>() / c.len() as f64;
    let bwd: f64 = s.iter().map(|p| nearest(p, c).1).sum::<f64>() / s.len() as f64;
    Ok(fwd + bwd)
}

/// Chamfer distance plus its gradient w.r.t. both arguments.
///
/// Nearest-neighbor assignments are held fixed (subgradient at ties).
pub fn chamfer_with_grad(c: &[Point3], s: &[Point3]) -> Result<(f64, Vec<Point3>, Vec<Point3>)> {
    check_nonempty(c, s)?;
    let mut gc = vec![[0.0; 3]; c.len()];
    let mut gs = vec![[0.0; 3]; s.len()];
    let (wc, ws) = (1.0 / c.len() as f64, 1.0 / s.len() as f64);
    let mut fwd = 0.0;
    for (a, p) in c.iter().enumerate() {
        let (b, d) = nearest(p, s);
        fwd += d;
        let diff = sub(p, &s[b]);
        for k in 0..3 {
            gc[a][k] += 2.0 * wc * diff[k];
            gs[b][k] -= 2.0 * wc * diff[k];
        }
    }
    let mut bwd = 0.0;
    for (b, p) in s.iter().enumerate() {
        let (a, d) = nearest(p, c);
        bwd += d;
        let diff = sub(p, &c[a]);
        for k in 0..3 {
            gs[b][k] += 2.0 * ws * diff[k];
            gc[a][k] -= 2.0 * ws * diff[k];
        }
    }
    Ok((fwd * wc + bwd * ws, gc, gs))
}
