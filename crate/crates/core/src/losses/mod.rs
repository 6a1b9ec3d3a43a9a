//! Training objective and surface-sampling metrics.
//!
//! The objective is the batch-mean Chamfer distance between each output
//! correspondence set and its complete cloud, plus `alpha` times the
//! pairwise mapping error between every pair of outputs in the batch.

mod chamfer;
mod emd;
mod mapping;
mod p2f;

pub use chamfer::{chamfer_distance, chamfer_with_grad};
pub use emd::{earth_movers_distance, solve_assignment};
pub use mapping::{
    mapping_error, mapping_error_on_graph, mapping_error_with_grad, NeighborGraph,
};
pub use p2f::{closest_point_on_triangle, point_to_face_distance, point_triangle_distance};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{farthest_point_sample, Point3, PointCloud, TriangleMesh};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the mapping-error regularizer.
    #[serde(rename = "alpha")]
    pub alpha: f64,
    /// Neighborhood size of the mapping error.
    #[serde(rename = "K")]
    pub k_neighbors: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            k_neighbors: 10,
        }
    }
}

impl LossConfig {
    pub fn validate(&self, m: usize) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return Err(Error::invalid("alpha must be non-negative"));
        }
        if self.k_neighbors == 0 || self.k_neighbors >= m {
            return Err(Error::invalid(format!(
                "K = {} must be in [1, M = {m})",
                self.k_neighbors
            )));
        }
        Ok(())
    }
}

/// Loss broken into its terms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    /// Batch-mean Chamfer distance.
    pub cd: f64,
    /// Normalized pairwise mapping-error sum (before `alpha`).
    pub me: f64,
}

fn check_batch<A: AsRef<[Point3]>, B: AsRef<[Point3]>>(
    outputs: &[A],
    fulls: &[B],
    cfg: &LossConfig,
) -> Result<()> {
    if outputs.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if outputs.len() != fulls.len() {
        return Err(Error::SizeMismatch(format!(
            "{} outputs but {} target clouds",
            outputs.len(),
            fulls.len()
        )));
    }
    let m = outputs[0].as_ref().len();
    if outputs.iter().any(|o| o.as_ref().len() != m) {
        return Err(Error::SizeMismatch("outputs differ in point count".into()));
    }
    if outputs.len() > 1 && cfg.alpha > 0.0 {
        cfg.validate(m)?;
    }
    Ok(())
}

/// Batch loss and its gradient w.r.t. every output set.
///
/// The regularizer sums, for every ordered pair `i ≠ j`, both
/// `ME(Cⁱ, Cʲ)` and `ME(Cʲ, Cⁱ)` and divides by `(B − 1)²`; with a single
/// output there are no pairs and the term is zero.
pub fn correspondence_loss_with_grad<A: AsRef<[Point3]>, B: AsRef<[Point3]>>(
    outputs: &[A],
    fulls: &[B],
    cfg: &LossConfig,
) -> Result<(LossValue, Vec<Vec<Point3>>)> {
    check_batch(outputs, fulls, cfg)?;
    let b = outputs.len();
    let mut grads: Vec<Vec<Point3>> = outputs
        .iter()
        .map(|o| vec![[0.0; 3]; o.as_ref().len()])
        .collect();

    let mut cd = 0.0;
    for (i, (o, s)) in outputs.iter().zip(fulls).enumerate() {
        let (v, gc, _) = chamfer_with_grad(o.as_ref(), s.as_ref())?;
        cd += v;
        for (g, d) in grads[i].iter_mut().zip(gc) {
            for a in 0..3 {
                g[a] += d[a] / b as f64;
            }
        }
    }
    cd /= b as f64;

    let mut me = 0.0;
    if b > 1 && cfg.alpha > 0.0 {
        let graphs = outputs
            .iter()
            .map(|o| NeighborGraph::build(o.as_ref(), cfg.k_neighbors))
            .collect::<Result<Vec<_>>>()?;
        let norm = 1.0 / ((b - 1) * (b - 1)) as f64;
        let w = cfg.alpha * norm;
        for i in 0..b {
            for j in 0..b {
                if i == j {
                    continue;
                }
                for (p, q) in [(i, j), (j, i)] {
                    let (gp, gq) = two_mut(&mut grads, p, q);
                    me += mapping::mapping_error_accumulate(
                        &graphs[p],
                        outputs[p].as_ref(),
                        outputs[q].as_ref(),
                        w,
                        gp,
                        gq,
                    );
                }
            }
        }
        me *= norm;
    }
    let total = cd + cfg.alpha * me;
    Ok((LossValue { total, cd, me }, grads))
}

/// Batch loss value only.
pub fn correspondence_loss<A: AsRef<[Point3]>, B: AsRef<[Point3]>>(
    outputs: &[A],
    fulls: &[B],
    cfg: &LossConfig,
) -> Result<LossValue> {
    correspondence_loss_with_grad(outputs, fulls, cfg).map(|(v, _)| v)
}

fn two_mut<T>(v: &mut [T], a: usize, b: usize) -> (&mut T, &mut T) {
    assert_ne!(a, b);
    if a < b {
        let (lo, hi) = v.split_at_mut(b);
        (&mut lo[a], &mut hi[0])
    } else {
        let (lo, hi) = v.split_at_mut(a);
        (&mut hi[0], &mut lo[b])
    }
}

/// Per-shape surface-sampling metrics in millimetres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceMetrics {
    pub shape_id: String,
    pub cd_mm2: f64,
    pub emd_mm: f64,
    pub p2f_mean_mm: Option<f64>,
    pub p2f_max_mm: Option<f64>,
}

impl SurfaceMetrics {
    pub const CSV_HEADER: &'static str = "shape_id,cd_mm2,emd_mm,p2f_mean_mm,p2f_max_mm";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{}",
            self.shape_id,
            self.cd_mm2,
            self.emd_mm,
            opt(self.p2f_mean_mm),
            opt(self.p2f_max_mm)
        )
    }

    /// Mean over shapes, labeled `mean`.
    pub fn mean(rows: &[SurfaceMetrics]) -> Option<SurfaceMetrics> {
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        let avg_opt = |f: fn(&SurfaceMetrics) -> Option<f64>| -> Option<f64> {
            rows.iter().map(f).sum::<Option<f64>>().map(|s| s / n)
        };
        Some(SurfaceMetrics {
            shape_id: "mean".into(),
            cd_mm2: rows.iter().map(|r| r.cd_mm2).sum::<f64>() / n,
            emd_mm: rows.iter().map(|r| r.emd_mm).sum::<f64>() / n,
            p2f_mean_mm: avg_opt(|r| r.p2f_mean_mm),
            p2f_max_mm: avg_opt(|r| r.p2f_max_mm),
        })
    }
}

/// CD, EMD and (with a mesh) P2F of predicted points against a shape.
///
/// EMD needs equal sizes, so the larger of the two sets is reduced by
/// farthest point sampling from index 0.
pub fn surface_metrics(
    shape_id: &str,
    predicted: &[Point3],
    surface: &[Point3],
    mesh: Option<&TriangleMesh>,
) -> Result<SurfaceMetrics> {
    let cd = chamfer_distance(predicted, surface)?;
    let emd = if surface.len() >= predicted.len() {
        let (sub, _) =
            farthest_point_sample(&PointCloud::new(surface.to_vec())?, predicted.len(), 0)?;
        earth_movers_distance(predicted, sub.points())?
    } else {
        let (sub, _) =
            farthest_point_sample(&PointCloud::new(predicted.to_vec())?, surface.len(), 0)?;
        earth_movers_distance(sub.points(), surface)?
    };
    let (p2f_mean, p2f_max) = match mesh {
        Some(m) => {
            let d = point_to_face_distance(predicted, m)?;
            let mean = d.iter().sum::<f64>() / d.len() as f64;
            let max = d.iter().copied().fold(0.0, f64::max);
            (Some(mean), Some(max))
        }
        None => (None, None),
    };
    Ok(SurfaceMetrics {
        shape_id: shape_id.to_string(),
        cd_mm2: cd,
        emd_mm: emd,
        p2f_mean_mm: p2f_mean,
        p2f_max_mm: p2f_max,
    })
}
