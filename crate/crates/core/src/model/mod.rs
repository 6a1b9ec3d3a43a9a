//! Correspondence networks: per-point encoders (edge-convolution or
//! PointNet), attention or MLP correspondence-map heads, and the
//! global-bottleneck autoencoder baselines.

mod checkpoint;
mod config;
mod network;
mod params;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use config::{BottleneckKind, EncoderKind, HeadKind, ModelConfig};
pub use network::{ForwardPass, Model};
pub use params::ParamStore;

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::tensor::Mat;

/// Row-stochastic `M × N` weights: output point `i` is `Σ_j w[i, j] · x_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceMap {
    weights: Mat,
}

impl CorrespondenceMap {
    pub(crate) fn from_mat(weights: Mat) -> Self {
        Self { weights }
    }

    /// Checks nonnegativity and unit row sums (within 1e-5).
    pub fn new(weights: Mat) -> Result<Self> {
        for i in 0..weights.rows() {
            let row = weights.row(i);
            if row.iter().any(|&w| !(w >= 0.0)) {
                return Err(Error::invalid(format!("map row {i} has a negative entry")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-5 {
                return Err(Error::invalid(format!("map row {i} sums to {s}")));
            }
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &Mat {
        &self.weights
    }

    pub fn m(&self) -> usize {
        self.weights.rows()
    }

    pub fn n(&self) -> usize {
        self.weights.cols()
    }

    /// Largest deviation of any row sum from 1.
    pub fn max_row_sum_error(&self) -> f64 {
        (0..self.m())
            .map(|i| (self.weights.row(i).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `map · points`.
    pub fn apply(&self, points: &[Point3]) -> Result<Vec<Point3>> {
        if points.len() != self.n() {
            return Err(Error::SizeMismatch(format!(
                "map has {} columns, got {} points",
                self.n(),
                points.len()
            )));
        }
        Ok(self.weights.matmul(&Mat::from_points(points)).to_points())
    }

    /// Long-format CSV: `output_index,input_index,weight,log10_weight`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "output_index,input_index,weight,log10_weight")?;
        for i in 0..self.m() {
            for (j, &v) in self.weights.row(i).iter().enumerate() {
                writeln!(w, "{i},{j},{v:.9e},{:.6}", v.max(f64::MIN_POSITIVE).log10())?;
            }
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
            .map_err(|e| Error::io(path, e))
    }
}

/// Ordered correspondence points predicted for one shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceSet {
    pub source_shape_id: String,
    pub points: Vec<Point3>,
}

/// Forward-pass output.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub points: Vec<Point3>,
    pub map: Option<CorrespondenceMap>,
}
