use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dist2, knn_indices_flat, sub, Point3};

/// Self-excluded `k`-nearest-neighbor graph of a point set with Gaussian
/// proximity weights `exp(-‖c_i − c_j‖²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborGraph {
    pub k: usize,
    /// Row-major `M × k`.
    pub indices: Vec<usize>,
    /// Row-major `M × k`, each in `(0, 1]`.
    pub weights: Vec<f64>,
}

impl NeighborGraph {
    pub fn build(points: &[Point3], k: usize) -> Result<Self> {
        if k == 0 || k >= points.len() {
            return Err(Error::invalid(format!(
                "mapping-error neighborhood k = {k} must be in [1, {})",
                points.len()
            )));
        }
        let indices = knn_indices_flat(points, points, k, true)?;
        let weights = indices
            .iter()
            .enumerate()
            .map(|(e, &j)| (-dist2(&points[e / k], &points[j])).exp())
            .collect();
        Ok(Self { k, indices, weights })
    }

    pub fn len(&self) -> usize {
        self.indices.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }
}

fn check(c_prime: &[Point3], c_dbl: &[Point3]) -> Result<()> {
    if c_prime.len() != c_dbl.len() {
        return Err(Error::SizeMismatch(format!(
            "mapping error between sets of {} and {} points",
            c_prime.len(),
            c_dbl.len()
        )));
    }
    Ok(())
}

/// Mapping error of `c_dbl` under the neighborhoods of `c_prime`.
pub fn mapping_error(c_prime: &[Point3], c_dbl: &[Point3], k: usize) -> Result<f64> {
    check(c_prime, c_dbl)?;
    let graph = NeighborGraph::build(c_prime, k)?;
    mapping_error_on_graph(&graph, c_dbl)
}

/// Mapping error with a prebuilt neighbor graph of the first argument.
pub fn mapping_error_on_graph(graph: &NeighborGraph, c_dbl: &[Point3]) -> Result<f64> {
    if graph.len() != c_dbl.len() {
        return Err(Error::SizeMismatch("neighbor graph and point set differ".into()));
    }
    let k = graph.k;
    let mut total = 0.0;
    for (e, (&j, &w)) in graph.indices.iter().zip(&graph.weights).enumerate() {
        total += w * dist2(&c_dbl[e / k], &c_dbl[j]);
    }
    Ok(total / (c_dbl.len() * k) as f64)
}

/// Mapping error and its gradients w.r.t. `c_prime` (through the weights,
/// neighborhoods fixed) and `c_dbl`. Gradients are accumulated into the
/// provided buffers scaled by `scale`.
pub(crate) fn mapping_error_accumulate(
    graph: &NeighborGraph,
    c_prime: &[Point3],
    c_dbl: &[Point3],
    scale: f64,
    g_prime: &mut [Point3],
    g_dbl: &mut [Point3],
) -> f64 {
    let k = graph.k;
    let norm = 1.0 / (c_dbl.len() * k) as f64;
    let mut total = 0.0;
    for (e, (&j, &w)) in graph.indices.iter().zip(&graph.weights).enumerate() {
        let i = e / k;
        let dd = sub(&c_dbl[i], &c_dbl[j]);
        let err = dd[0] * dd[0] + dd[1] * dd[1] + dd[2] * dd[2];
        total += w * err;
        let dp = sub(&c_prime[i], &c_prime[j]);
        for a in 0..3 {
            let gd = scale * norm * 2.0 * w * dd[a];
            g_dbl[i][a] += gd;
            g_dbl[j][a] -= gd;
            // d/dc'_i of exp(-|c'_i - c'_j|^2) = -2 w (c'_i - c'_j)
            let gp = scale * norm * err * (-2.0) * w * dp[a];
            g_prime[i][a] += gp;
            g_prime[j][a] -= gp;
        }
    }
    total * norm
}

/// Mapping error with gradients `(value, d/dc_prime, d/dc_dbl)`.
pub fn mapping_error_with_grad(
    c_prime: &[Point3],
    c_dbl: &[Point3],
    k: usize,
) -> Result<(f64, Vec<Point3>, Vec<Point3>)> {
    check(c_prime, c_dbl)?;
    let graph = NeighborGraph::build(c_prime, k)?;
    let mut gp = vec![[0.0; 3]; c_prime.len()];
    let mut gd = vec![[0.0; 3]; c_dbl.len()];
    let v = mapping_error_accumulate(&graph, c_prime, c_dbl, 1.0, &mut gp, &mut gd);
    Ok((v, gp, gd))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_target_gives_zero() {
        let cp = vec![[0.0; 3], [1.0, 2.0, 0.0], [0.5, 0.1, 3.0], [2.0, 2.0, 2.0]];
        let cdd = vec![[7.0, 7.0, 7.0]; 4];
        assert_eq!(mapping_error(&cp, &cdd, 2).unwrap(), 0.0);
    }

    #[test]
    fn two_point_hand_value() {
        let c = vec![[0.0; 3], [1.0, 0.0, 0.0]];
        let v = mapping_error(&c, &c, 1).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.36788).abs() < 1e-5);
    }

    #[test]
    fn argument_errors() {
        let c = vec![[0.0; 3], [1.0, 0.0, 0.0]];
        assert!(matches!(
            mapping_error(&c, &c[..1], 1),
            Err(Error::SizeMismatch(_))
        ));
        assert!(mapping_error(&c, &c, 2).is_err());
        assert!(mapping_error(&c, &c, 0).is_err());
    }

    #[test]
    fn weights_in_unit_interval() {
        let c = vec![[0.0; 3], [0.0; 3], [0.4, 0.0, 0.0], [3.0, 1.0, 0.0]];
        let g = NeighborGraph::build(&c, 2).unwrap();
        assert!(g.weights.iter().all(|&w| w > 0.0 && w <= 1.0));
        // coincident neighbor gets weight exactly one
        assert_eq!(g.neighbors(0)[0], 1);
        assert_eq!(g.weights[0], 1.0);
    }

    #[test]
    fn not_symmetric() {
        let a = vec![[0.0; 3], [1.0, 0.0, 0.0], [5.0, 0.0, 0.0]];
        let b = vec![[0.0; 3], [3.0, 0.0, 0.0], [3.5, 0.0, 0.0]];
        let ab = mapping_error(&a, &b, 1).unwrap();
        let ba = mapping_error(&b, &a, 1).unwrap();
        assert!((ab - ba).abs() > 1e-6);
    }
}
