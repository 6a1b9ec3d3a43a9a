use std::cmp::Ordering;

use rand::seq::index;
use rand::Rng;

use super::{dist2, Point3, PointCloud};
use crate::error::{Error, Result};

/// Draws `n` points uniformly without replacement.
pub fn random_subsample<R: Rng + ?Sized>(
    cloud: &PointCloud,
    n: usize,
    rng: &mut R,
) -> Result<PointCloud> {
    if n == 0 || n > cloud.count() {
        return Err(Error::invalid(format!(
            "cannot draw {n} of {} points without replacement",
            cloud.count()
        )));
    }
    let idx = index::sample(rng, cloud.count(), n).into_vec();
    cloud.subset(&idx)
}

/// Greedy max-min subsampling. Ties go to the lowest index.
pub fn farthest_point_sample(
    cloud: &PointCloud,
    m: usize,
    start_index: usize,
) -> Result<(PointCloud, Vec<usize>)> {
    let pts = cloud.points();
    if m == 0 || m > pts.len() {
        return Err(Error::invalid(format!(
            "farthest point sampling of {m} from {} points",
            pts.len()
        )));
    }
    if start_index >= pts.len() {
        return Err(Error::invalid(format!("start index {start_index} out of range")));
    }
    let mut selected = Vec::with_capacity(m);
    let mut min_d = vec![f64::INFINITY; pts.len()];
    let mut current = start_index;
    selected.push(current);
    while selected.len() < m {
        let c = pts[current];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in pts.iter().enumerate() {
            let d = dist2(p, &c);
            if d < min_d[i] {
                min_d[i] = d;
            }
            // strict comparison keeps the lowest index on ties
            if min_d[i] > best_d {
                best_d = min_d[i];
                best = i;
            }
        }
        current = best;
        selected.push(current);
    }
    Ok((cloud.subset(&selected)?, selected))
}

#[inline]
fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.partial_cmp(&b.0)
        .unwrap_or(Ordering::Equal)
        .then(a.1.cmp(&b.1))
}

/// Selects the `k` smallest `(distance, index)` pairs in ascending order.
pub(crate) fn select_k(candidates: &mut Vec<(f64, usize)>, k: usize) -> &[(f64, usize)] {
    if k < candidates.len() {
        candidates.select_nth_unstable_by(k - 1, by_distance_then_index);
        candidates.truncate(k);
    }
    candidates.sort_unstable_by(by_distance_then_index);
    &candidates[..k]
}

/// Row-major `query.len() × k` table of nearest reference indices.
///
/// With `exclude_self` the two sets are the same and row `i` never contains `i`.
pub fn knn_indices_flat(
    query: &[Point3],
    reference: &[Point3],
    k: usize,
    exclude_self: bool,
) -> Result<Vec<usize>> {
    if exclude_self && query.len() != reference.len() {
        return Err(Error::SizeMismatch(
            "self-excluded neighbor query needs identical sets".into(),
        ));
    }
    let available = reference.len() - usize::from(exclude_self).min(reference.len());
    if k == 0 || k > available {
        return Err(Error::invalid(format!(
            "k = {k} out of range for {available} candidate neighbors"
        )));
    }
    let mut out = Vec::with_capacity(query.len() * k);
    let mut cand = Vec::with_capacity(reference.len());
    for (qi, q) in query.iter().enumerate() {
        cand.clear();
        cand.extend(
            reference
                .iter()
                .enumerate()
                .filter(|(ri, _)| !(exclude_self && *ri == qi))
                .map(|(ri, r)| (dist2(q, r), ri)),
        );
        out.extend(select_k(&mut cand, k).iter().map(|&(_, i)| i));
    }
    Ok(out)
}

/// Nearest reference indices per query point, ascending by distance.
pub fn knn_indices(
    query: &PointCloud,
    reference: &PointCloud,
    k: usize,
    exclude_self: bool,
) -> Result<Vec<Vec<usize>>> {
    let flat = knn_indices_flat(query.points(), reference.points(), k, exclude_self)?;
    Ok(flat.chunks(k).map(|c| c.to_vec()).collect())
}
