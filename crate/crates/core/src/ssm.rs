//! PCA shape statistics over correspondence sets: compactness,
//! generalization, specificity, mean shape and modes of variation.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point3;

/// Eigenvalues below this fraction of the largest are treated as zero.
const RELATIVE_ZERO: f64 = 1e-12;
/// Slack when comparing cumulative variance fractions with a threshold.
const THRESHOLD_SLACK: f64 = 1e-12;

/// Linear shape model in flattened `3M` coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Orthonormal modes, one `3M` vector each, ordered as `eigenvalues`.
    pub modes: Vec<Vec<f64>>,
    /// Variances, non-increasing and positive.
    pub eigenvalues: Vec<f64>,
    pub n_train: usize,
}

fn flatten(set: &[Point3]) -> Vec<f64> {
    set.iter().flat_map(|p| p.iter().copied()).collect()
}

fn unflatten(v: &[f64]) -> Vec<Point3> {
    v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

fn check_sizes<S: AsRef<[Point3]>>(sets: &[S], m: usize) -> Result<()> {
    if let Some(s) = sets.iter().find(|s| s.as_ref().len() != m) {
        return Err(Error::SizeMismatch(format!(
            "correspondence set has {} points, model expects {m}",
            s.as_ref().len()
        )));
    }
    Ok(())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn mean_point_dist(a: &[f64], b: &[f64]) -> f64 {
    let m = a.len() / 3;
    a.chunks_exact(3)
        .zip(b.chunks_exact(3))
        .map(|(p, q)| sq_dist(p, q).sqrt())
        .sum::<f64>()
        / m as f64
}

/// Fits the sample covariance (divisor `n − 1`) of flattened sets.
///
/// Uses the `n × n` Gram matrix when there are fewer sets than
/// coordinates and the `3M × 3M` covariance otherwise; both give the same
/// nonzero spectrum.
pub fn fit_pca<S: AsRef<[Point3]>>(sets: &[S]) -> Result<PcaModel> {
    let n = sets.len();
    if n < 2 {
        return Err(Error::invalid(format!("PCA needs at least 2 sets, got {n}")));
    }
    let m = sets[0].as_ref().len();
    if m == 0 {
        return Err(Error::invalid("correspondence sets are empty"));
    }
    check_sizes(sets, m)?;
    let d = 3 * m;
    let rows: Vec<Vec<f64>> = sets.iter().map(|s| flatten(s.as_ref())).collect();
    let mut mean = vec![0.0; d];
    for r in &rows {
        for (a, v) in mean.iter_mut().zip(r) {
            *a += v / n as f64;
        }
    }
    let x = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
    let denom = (n - 1) as f64;

    let mut pairs: Vec<(f64, Vec<f64>)> = if n < d {
        let gram = (&x * x.transpose()) / denom;
        let eig = SymmetricEigen::new(gram);
        (0..n)
            .map(|k| {
                let lam = eig.eigenvalues[k];
                let u = eig.eigenvectors.column(k);
                let mut v: Vec<f64> = (x.transpose() * u).iter().copied().collect();
                let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                if norm > 0.0 {
                    v.iter_mut().for_each(|a| *a /= norm);
                }
                (lam, v)
            })
            .collect()
    } else {
        let cov = (x.transpose() * &x) / denom;
        let eig = SymmetricEigen::new(cov);
        (0..d)
            .map(|k| (eig.eigenvalues[k], eig.eigenvectors.column(k).iter().copied().collect()))
            .collect()
    };
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let largest = pairs.first().map_or(0.0, |p| p.0);
    pairs.retain(|p| largest > 0.0 && p.0 >= RELATIVE_ZERO * largest);
    pairs.truncate(n - 1);
    let (eigenvalues, modes) = pairs.into_iter().unzip();
    Ok(PcaModel {
        mean,
        modes,
        eigenvalues,
        n_train: n,
    })
}

impl PcaModel {
    pub fn num_points(&self) -> usize {
        self.mean.len() / 3
    }

    pub fn total_variance(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    /// Cumulative explained-variance fractions, one per mode.
    pub fn cumulative_variance(&self) -> Vec<f64> {
        let total = self.total_variance();
        let mut acc = 0.0;
        self.eigenvalues
            .iter()
            .map(|l| {
                acc += l;
                if total > 0.0 {
                    acc / total
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Number of leading modes that reach `threshold` of the variance.
    pub fn modes_for(&self, threshold: f64) -> usize {
        self.cumulative_variance()
            .iter()
            .position(|&c| c >= threshold - THRESHOLD_SLACK)
            .map_or(0, |k| k + 1)
    }

    fn project(&self, x: &[f64], k: usize) -> Vec<f64> {
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        let mut rec = self.mean.clone();
        for u in &self.modes[..k] {
            let c: f64 = u.iter().zip(&centered).map(|(a, b)| a * b).sum();
            for (r, a) in rec.iter_mut().zip(u) {
                *r += c * a;
            }
        }
        rec
    }

    /// Reconstruction of `set` from its first `k` mode coefficients.
    pub fn reconstruct(&self, set: &[Point3], k: usize) -> Result<Vec<Point3>> {
        check_sizes(&[set], self.num_points())?;
        Ok(unflatten(&self.project(&flatten(set), k.min(self.modes.len()))))
    }

    pub fn mean_shape(&self) -> Vec<Point3> {
        unflatten(&self.mean)
    }

    /// Shape at `mean + Σ b_k u_k`.
    pub fn synthesize(&self, coefficients: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (b, u) in coefficients.iter().zip(&self.modes) {
            for (o, a) in out.iter_mut().zip(u) {
                *o += b * a;
            }
        }
        out
    }
}

/// Modes needed for `threshold` of the variance, plus the full curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Compactness {
    pub threshold: f64,
    pub modes: usize,
    pub cumulative: Vec<f64>,
}

pub fn compactness(pca: &PcaModel, threshold: f64) -> Compactness {
    Compactness {
        threshold,
        modes: pca.modes_for(threshold),
        cumulative: pca.cumulative_variance(),
    }
}

/// Held-out reconstruction error with the modes retaining `threshold` variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generalization {
    pub modes: usize,
    /// `‖C − Ĉ‖²` over the flattened set, per test shape.
    pub squared: Vec<f64>,
    /// Mean per-point Euclidean error, per test shape.
    pub per_point: Vec<f64>,
    pub mean_squared: f64,
    pub mean_per_point: f64,
}

pub fn generalization<S: AsRef<[Point3]>>(
    pca: &PcaModel,
    test_sets: &[S],
    threshold: f64,
) -> Result<Generalization> {
    if test_sets.is_empty() {
        return Err(Error::invalid("generalization needs at least one test set"));
    }
    check_sizes(test_sets, pca.num_points())?;
    let k = pca.modes_for(threshold);
    let mut squared = Vec::with_capacity(test_sets.len());
    let mut per_point = Vec::with_capacity(test_sets.len());
    for s in test_sets {
        let x = flatten(s.as_ref());
        let rec = pca.project(&x, k);
        squared.push(sq_dist(&x, &rec));
        per_point.push(mean_point_dist(&x, &rec));
    }
    let n = test_sets.len() as f64;
    Ok(Generalization {
        modes: k,
        mean_squared: squared.iter().sum::<f64>() / n,
        mean_per_point: per_point.iter().sum::<f64>() / n,
        squared,
        per_point,
    })
}

/// Distance from model samples to the nearest training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Specificity {
    pub modes: usize,
    pub n_samples: usize,
    /// Mean over samples of the minimum `‖C′ − C‖²` over training sets.
    pub mean_squared: f64,
    /// Monte-Carlo standard error of `mean_squared`.
    pub std_error: f64,
    /// Mean per-point Euclidean distance to that nearest training set.
    pub mean_per_point: f64,
}

pub fn specificity<S: AsRef<[Point3]>, R: Rng + ?Sized>(
    pca: &PcaModel,
    train_sets: &[S],
    n_samples: usize,
    threshold: f64,
    rng: &mut R,
) -> Result<Specificity> {
    if n_samples == 0 {
        return Err(Error::invalid("specificity needs at least one sample"));
    }
    if train_sets.is_empty() {
        return Err(Error::invalid("specificity needs training sets"));
    }
    check_sizes(train_sets, pca.num_points())?;
    let k = pca.modes_for(threshold);
    let train: Vec<Vec<f64>> = train_sets.iter().map(|s| flatten(s.as_ref())).collect();
    let mut values = Vec::with_capacity(n_samples);
    let mut per_point = 0.0;
    for _ in 0..n_samples {
        let b: Vec<f64> = pca.eigenvalues[..k]
            .iter()
            .map(|l| {
                let z: f64 = StandardNormal.sample(rng);
                l.sqrt() * z
            })
            .collect();
        let x = pca.synthesize(&b);
        let (best, idx) = train
            .iter()
            .enumerate()
            .map(|(i, t)| (sq_dist(&x, t), i))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .expect("nonempty");
        values.push(best);
        per_point += mean_point_dist(&x, &train[idx]);
    }
    let n = n_samples as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std_error = if n_samples > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
    } else {
        0.0
    };
    Ok(Specificity {
        modes: k,
        n_samples,
        mean_squared: mean,
        std_error,
        mean_per_point: per_point / n,
    })
}

/// Shapes along one mode at `mean + t·σ·u` for each `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeWalk {
    pub mode: usize,
    pub steps: Vec<f64>,
    pub positions: Vec<Vec<Point3>>,
}

pub fn mode_walk(pca: &PcaModel, mode: usize, steps: &[f64]) -> Result<ModeWalk> {
    if mode >= pca.modes.len() {
        return Err(Error::invalid(format!(
            "mode {mode} out of range; the model has {} modes",
            pca.modes.len()
        )));
    }
    let sd = pca.eigenvalues[mode].sqrt();
    let positions = steps
        .iter()
        .map(|&t| {
            let mut b = vec![0.0; mode + 1];
            b[mode] = t * sd;
            unflatten(&pca.synthesize(&b))
        })
        .collect();
    Ok(ModeWalk {
        mode,
        steps: steps.to_vec(),
        positions,
    })
}

/// `mode,eigenvalue,cumulative_fraction` rows.
pub fn write_variance_csv(path: &Path, pca: &PcaModel) -> Result<()> {
    let mut out = String::from("mode,eigenvalue,cumulative_fraction\n");
    for (i, (l, c)) in pca.eigenvalues.iter().zip(pca.cumulative_variance()).enumerate() {
        out.push_str(&format!("{},{:.12e},{:.12}\n", i + 1, l, c));
    }
    write_bytes(path, out.as_bytes())
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(bytes))
        .map_err(|e| Error::io(path, e))
}

const PCA_MAGIC: &[u8; 8] = b"SHAPEPCA";
const PCA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct PcaHeader {
    num_points: usize,
    n_train: usize,
    eigenvalues: Vec<f64>,
}

/// Binary container: magic, `u32` version, `u64` header length, JSON
/// header, then the mean and each mode as little-endian `f64`.
pub fn save_pca(path: &Path, pca: &PcaModel) -> Result<()> {
    let header = serde_json::to_vec(&PcaHeader {
        num_points: pca.num_points(),
        n_train: pca.n_train,
        eigenvalues: pca.eigenvalues.clone(),
    })?;
    let mut buf = Vec::new();
    buf.extend_from_slice(PCA_MAGIC);
    buf.extend_from_slice(&PCA_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    for v in std::iter::once(&pca.mean).chain(&pca.modes) {
        for x in v {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    write_bytes(path, &buf)
}

pub fn load_pca(path: &Path) -> Result<PcaModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::invalid(format!("{}: {m}", path.display()));
    if bytes.len() < 20 || &bytes[..8] != PCA_MAGIC {
        return Err(bad("not a PCA model file"));
    }
    if u32::from_le_bytes(bytes[8..12].try_into().unwrap()) != PCA_VERSION {
        return Err(bad("unsupported version"));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let header: PcaHeader = serde_json::from_slice(bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated"))?)?;
    let d = 3 * header.num_points;
    let data: Vec<f64> = bytes[20 + hlen..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if data.len() != d * (1 + header.eigenvalues.len()) || (bytes.len() - 20 - hlen) % 8 != 0 {
        return Err(bad("data size does not match header"));
    }
    let mut chunks = data.chunks_exact(d).map(<[f64]>::to_vec);
    let mean = chunks.next().unwrap();
    Ok(PcaModel {
        mean,
        modes: chunks.collect(),
        eigenvalues: header.eigenvalues,
        n_train: header.n_train,
    })
}
