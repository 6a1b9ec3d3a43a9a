//! Input corruptions for robustness experiments: Gaussian noise, missing
//! regions and reduced training sets.
//!
//! Corruptions only touch `Shape::input`; the clean surface stays the
//! reconstruction and evaluation target.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geometry::Split;
use crate::geometry::{dist2, Cohort, PointCloud};
use crate::rng;

/// Number of training shapes to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrainSubset {
    #[default]
    All,
    Size(usize),
}

impl Serialize for TrainSubset {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            TrainSubset::All => s.serialize_str("all"),
            TrainSubset::Size(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for TrainSubset {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Size(usize),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Size(0) => Err(serde::de::Error::custom("train subset size must be positive")),
            Raw::Size(n) => Ok(TrainSubset::Size(n)),
            Raw::Word(w) if w == "all" => Ok(TrainSubset::All),
            Raw::Word(w) => Err(serde::de::Error::custom(format!(
                "expected a positive integer or \"all\", got \"{w}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionSpec {
    #[serde(default)]
    pub noise_sigma_mm: f64,
    #[serde(default)]
    pub partial_fraction: f64,
    /// Overrides the model's `N` when set (sparsity experiments).
    #[serde(default)]
    pub input_size_n: Option<usize>,
    #[serde(default)]
    pub train_subset_size: TrainSubset,
    #[serde(default)]
    pub seed: u64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        Self {
            noise_sigma_mm: 0.0,
            partial_fraction: 0.0,
            input_size_n: None,
            train_subset_size: TrainSubset::All,
            seed: 0,
        }
    }
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma_mm >= 0.0) || !self.noise_sigma_mm.is_finite() {
            return Err(Error::invalid(format!(
                "noise_sigma_mm = {} must be finite and >= 0",
                self.noise_sigma_mm
            )));
        }
        if !(0.0..1.0).contains(&self.partial_fraction) {
            return Err(Error::invalid(format!(
                "partial_fraction = {} must be in [0, 1)",
                self.partial_fraction
            )));
        }
        if self.input_size_n == Some(0) {
            return Err(Error::invalid("input_size_n must be positive"));
        }
        Ok(())
    }

    /// Whether any per-shape input corruption is configured.
    pub fn corrupts_inputs(&self) -> bool {
        self.noise_sigma_mm > 0.0 || self.partial_fraction > 0.0
    }
}

/// Adds i.i.d. `N(0, sigma²)` to every coordinate.
pub fn add_gaussian_noise<R: Rng + ?Sized>(
    cloud: &PointCloud,
    sigma_mm: f64,
    rng: &mut R,
) -> Result<PointCloud> {
    if !(sigma_mm >= 0.0) || !sigma_mm.is_finite() {
        return Err(Error::invalid(format!("noise sigma {sigma_mm} must be >= 0")));
    }
    if sigma_mm == 0.0 {
        return Ok(cloud.clone());
    }
    let normal = Normal::new(0.0, sigma_mm).expect("sigma checked above");
    let pts = cloud
        .points()
        .iter()
        .map(|p| std::array::from_fn(|a| p[a] + normal.sample(rng)))
        .collect();
    PointCloud::new(pts)
}

/// Indices removed by [`remove_region`]: the seed point and its nearest
/// neighbors, `⌈fraction · count⌉` in total, ascending by distance.
pub fn region_indices<R: Rng + ?Sized>(
    cloud: &PointCloud,
    fraction: f64,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::invalid(format!("fraction {fraction} must be in [0, 1)")));
    }
    let n = cloud.count();
    let k = (fraction * n as f64).ceil() as usize;
    if k == 0 {
        return Ok(Vec::new());
    }
    let pts = cloud.points();
    let seed = rng.random_range(0..n);
    let mut order: Vec<(f64, usize)> = pts
        .iter()
        .enumerate()
        .map(|(i, p)| (dist2(p, &pts[seed]), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    // the seed is first unless it has exact duplicates with lower index
    let pos = order.iter().position(|&(_, i)| i == seed).unwrap();
    let s = order.remove(pos);
    order.insert(0, s);
    Ok(order[..k].iter().map(|&(_, i)| i).collect())
}

/// Drops a contiguous Euclidean neighborhood of a random point.
pub fn remove_region<R: Rng + ?Sized>(
    cloud: &PointCloud,
    fraction: f64,
    rng: &mut R,
) -> Result<PointCloud> {
    let removed = region_indices(cloud, fraction, rng)?;
    if removed.is_empty() {
        return Ok(cloud.clone());
    }
    let mut keep = vec![true; cloud.count()];
    for i in removed {
        keep[i] = false;
    }
    let idx: Vec<usize> = (0..cloud.count()).filter(|&i| keep[i]).collect();
    cloud.subset(&idx)
}

/// Keeps the first `size` training shapes of a seeded permutation, so a
/// smaller subset is always contained in a larger one for the same seed.
/// Training shapes outside the subset are dropped; other splits are untouched.
pub fn subset_training(cohort: &Cohort, size: usize, seed: u64) -> Result<Cohort> {
    let train: Vec<usize> = (0..cohort.len())
        .filter(|&i| cohort.shapes[i].split == Split::Train)
        .collect();
    if size == 0 || size > train.len() {
        return Err(Error::invalid(format!(
            "training subset of {size} requested from {} training shapes",
            train.len()
        )));
    }
    let mut order = train.clone();
    order.shuffle(&mut rng::derived(seed, 0x5b5e7));
    let mut keep = vec![true; cohort.len()];
    for &i in &order[size..] {
        keep[i] = false;
    }
    Ok(Cohort {
        shapes: cohort
            .shapes
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(s, _)| s.clone())
            .collect(),
        normalization: cohort.normalization,
    })
}

fn id_stream(id: &str) -> u64 {
    // FNV-1a, stable across platforms and toolchains
    id.bytes().fold(0xcbf29ce484222325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x100000001b3)
    })
}

/// Applies the input corruptions of `spec` to every shape (once per shape,
/// identically for every split), then the training-subset rule.
///
/// Must run on a cohort in millimetres, before normalization.
pub fn apply_corruption(cohort: &Cohort, spec: &CorruptionSpec) -> Result<Cohort> {
    spec.validate()?;
    if cohort.normalization.is_some() && spec.corrupts_inputs() {
        return Err(Error::invalid(
            "corruptions are specified in mm and must be applied before normalization",
        ));
    }
    let mut out = cohort.clone();
    if spec.corrupts_inputs() {
        for shape in &mut out.shapes {
            let stream = id_stream(&shape.id);
            let mut noise_rng = rng::derived(spec.seed, stream);
            let mut region_rng = rng::derived(spec.seed, stream ^ 0x9e3779b97f4a7c15);
            let noisy = add_gaussian_noise(&shape.surface, spec.noise_sigma_mm, &mut noise_rng)?;
            shape.input = Some(remove_region(&noisy, spec.partial_fraction, &mut region_rng)?);
        }
    }
    match spec.train_subset_size {
        TrainSubset::All => Ok(out),
        TrainSubset::Size(n) => subset_training(&out, n, spec.seed),
    }
}
