//! Experiment configuration: one JSON document, dot-path overrides and an
//! output-root environment override.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use shapecorr::corruption::{CorruptionSpec, TrainSubset};
use shapecorr::model::{BottleneckKind, EncoderKind, HeadKind, ModelConfig};
use shapecorr::synthetic::CohortSpec;
use shapecorr::training::TrainConfig;

use crate::error::{CliError, CliResult};

/// Environment variable that relocates relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "SHAPECORR_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub corruption: CorruptionSpec,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub benchmark: BenchmarkConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

/// Either a generated cohort or a directory of mesh / point files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<CohortSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directory: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    #[serde(default = "yes")]
    pub align: bool,
    #[serde(default = "default_icp_iters")]
    pub icp_max_iters: usize,
    #[serde(default = "default_icp_tol")]
    pub icp_tol: f64,
    /// Train / validation / test fractions.
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    #[serde(default)]
    pub split_seed: u64,
}

fn yes() -> bool {
    true
}
fn default_icp_iters() -> usize {
    50
}
fn default_icp_tol() -> f64 {
    1e-6
}
fn default_split() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            align: true,
            icp_max_iters: default_icp_iters(),
            icp_tol: default_icp_tol(),
            split: default_split(),
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Cd,
    Emd,
    P2f,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    #[serde(default = "default_metrics")]
    pub metrics: Vec<Metric>,
    #[serde(default = "default_spec_samples")]
    pub specificity_samples: usize,
    #[serde(default = "default_threshold")]
    pub variance_threshold: f64,
    /// Modes exported as walks.
    #[serde(default = "default_mode_count")]
    pub mode_count: usize,
    /// Standard-deviation multiples along each exported mode.
    #[serde(default = "default_mode_steps")]
    pub mode_steps: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_metrics() -> Vec<Metric> {
    vec![Metric::Cd, Metric::Emd, Metric::P2f]
}
fn default_spec_samples() -> usize {
    1000
}
fn default_threshold() -> f64 {
    0.95
}
fn default_mode_count() -> usize {
    3
}
fn default_mode_steps() -> Vec<f64> {
    vec![-2.0, -1.0, 0.0, 1.0, 2.0]
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            metrics: default_metrics(),
            specificity_samples: default_spec_samples(),
            variance_threshold: default_threshold(),
            mode_count: default_mode_count(),
            mode_steps: default_mode_steps(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GridMode {
    /// Every combination of the listed values.
    #[default]
    Cartesian,
    /// The first value of every axis as baseline, then each other value of
    /// one axis at a time.
    OneAtATime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    #[serde(default = "default_variants")]
    pub variants: Vec<String>,
    #[serde(default = "zero_f")]
    pub noise_levels: Vec<f64>,
    #[serde(default = "zero_f")]
    pub partial_fractions: Vec<f64>,
    /// Values of `N`; empty means the model's own.
    #[serde(default)]
    pub input_sizes: Vec<usize>,
    #[serde(default = "all_train")]
    pub train_sizes: Vec<TrainSubset>,
    #[serde(default = "zero_u")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub grid: GridMode,
    /// Cells run concurrently; 1 runs sequentially.
    #[serde(default = "one")]
    pub workers: usize,
}

fn default_variants() -> Vec<String> {
    vec!["dgcnn+attn".into()]
}
fn zero_f() -> Vec<f64> {
    vec![0.0]
}
fn zero_u() -> Vec<u64> {
    vec![0]
}
fn all_train() -> Vec<TrainSubset> {
    vec![TrainSubset::All]
}
fn one() -> usize {
    1
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            variants: default_variants(),
            noise_levels: zero_f(),
            partial_fractions: zero_f(),
            input_sizes: Vec::new(),
            train_sizes: all_train(),
            seeds: zero_u(),
            grid: GridMode::Cartesian,
            workers: 1,
        }
    }
}

/// Applies a named architecture variant (`dgcnn+attn`, `pointnet+mlp`,
/// `dgcnn-ae`, ...) to `model`. Autoencoders also train with `alpha = 0`.
pub fn apply_variant(name: &str, model: &mut ModelConfig, train: &mut TrainConfig) -> CliResult<()> {
    let bad = || CliError::Config(format!("unknown model variant '{name}'"));
    let (enc, rest, ae) = if let Some(enc) = name.strip_suffix("-ae") {
        (enc, "mlp", true)
    } else {
        let (enc, head) = name.split_once('+').ok_or_else(bad)?;
        (enc, head, false)
    };
    model.encoder = match enc {
        "dgcnn" => EncoderKind::Dgcnn,
        "pointnet" => EncoderKind::Pointnet,
        _ => return Err(bad()),
    };
    model.head = match rest {
        "attn" => HeadKind::Attn,
        "mlp" => HeadKind::Mlp,
        _ => return Err(bad()),
    };
    model.bottleneck = if ae {
        train.alpha = 0.0;
        BottleneckKind::Global
    } else {
        BottleneckKind::PerPoint
    };
    Ok(())
}

impl ExperimentConfig {
    /// Checks cross-field consistency; messages name the offending key.
    pub fn validate(&self) -> CliResult<()> {
        let cfg = |key: &str, e: shapecorr::Error| CliError::Config(format!("{key}: {e}"));
        match (&self.dataset.synthetic, &self.dataset.directory) {
            (Some(spec), None) => spec.validate().map_err(|e| cfg("dataset.synthetic", e))?,
            (None, Some(_)) => {}
            _ => {
                return Err(CliError::Config(
                    "dataset: set exactly one of dataset.synthetic or dataset.directory".into(),
                ))
            }
        }
        let p = &self.preprocess;
        if p.split.iter().any(|r| !(*r >= 0.0)) || (p.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(CliError::Config(format!(
                "preprocess.split: {:?} must be non-negative and sum to 1",
                p.split
            )));
        }
        self.corruption.validate().map_err(|e| cfg("corruption", e))?;
        self.model.validate().map_err(|e| cfg("model", e))?;
        self.train.validate(&self.model).map_err(|e| cfg("train", e))?;
        let ev = &self.evaluation;
        if !(ev.variance_threshold > 0.0 && ev.variance_threshold <= 1.0) {
            return Err(CliError::Config(
                "evaluation.variance_threshold: must be in (0, 1]".into(),
            ));
        }
        if ev.specificity_samples == 0 {
            return Err(CliError::Config(
                "evaluation.specificity_samples: must be at least 1".into(),
            ));
        }
        let b = &self.benchmark;
        for (key, empty) in [
            ("benchmark.variants", b.variants.is_empty()),
            ("benchmark.noise_levels", b.noise_levels.is_empty()),
            ("benchmark.partial_fractions", b.partial_fractions.is_empty()),
            ("benchmark.train_sizes", b.train_sizes.is_empty()),
            ("benchmark.seeds", b.seeds.is_empty()),
        ] {
            if empty {
                return Err(CliError::Config(format!("{key}: must not be empty")));
            }
        }
        if b.workers == 0 {
            return Err(CliError::Config("benchmark.workers: must be at least 1".into()));
        }
        let (mut m, mut t) = (self.model.clone(), self.train.clone());
        for v in &b.variants {
            apply_variant(v, &mut m, &mut t)
                .map_err(|_| CliError::Config(format!("benchmark.variants: unknown variant '{v}'")))?;
        }
        Ok(())
    }

    /// Output directory after applying the environment override.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.output_dir.is_relative() => Path::new(&root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Sets `value` at a dot-separated path, creating objects on the way.
/// Numeric segments index into arrays.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> CliResult<()> {
    let segs: Vec<&str> = path.split('.').collect();
    if segs.iter().any(|s| s.is_empty()) {
        return Err(CliError::Config(format!("malformed override path '{path}'")));
    }
    let mut cur = root;
    for (i, seg) in segs.iter().enumerate() {
        let last = i + 1 == segs.len();
        if let Value::Array(items) = cur {
            let idx: usize = seg.parse().map_err(|_| {
                CliError::Config(format!("{}: expected an array index", segs[..=i].join(".")))
            })?;
            let len = items.len();
            let slot = items.get_mut(idx).ok_or_else(|| {
                CliError::Config(format!("{}: index out of range ({len} items)", segs[..=i].join(".")))
            })?;
            if last {
                *slot = value;
                return Ok(());
            }
            cur = slot;
            continue;
        }
        if cur.is_null() {
            *cur = Value::Object(Default::default());
        }
        let obj = cur.as_object_mut().ok_or_else(|| {
            CliError::Config(format!("{}: cannot set a field on a non-object", segs[..i].join(".")))
        })?;
        if last {
            obj.insert(seg.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(seg.to_string()).or_insert(Value::Null);
    }
    unreachable!("path has at least one segment")
}

/// Parses `key.path=value`; the value is JSON when it parses, else a string.
pub fn parse_override(text: &str) -> CliResult<(String, Value)> {
    let (k, v) = text
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override '{text}' must look like key.path=value")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

/// Builds and validates a config from JSON text plus overrides.
pub fn config_from_json(text: &str, overrides: &[String]) -> CliResult<ExperimentConfig> {
    let mut value: Value = serde_json::from_str(text)
        .map_err(|e| CliError::Config(format!("config is not valid JSON: {e}")))?;
    for o in overrides {
        let (k, v) = parse_override(o)?;
        set_path(&mut value, &k, v)?;
    }
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config(format!("{path}: {}", e.into_inner()))
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path, overrides: &[String]) -> CliResult<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    config_from_json(&text, overrides)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{"dataset":{"synthetic":{"family":"ellipsoid","n_shapes":10,"latent_dims":3}},
        "model":{"N":64,"M":32,"L":16,"graph_k":8}}"#;

    #[test]
    fn overrides_and_roundtrip() {
        let cfg = config_from_json(
            BASE,
            &["train.LR=0.001".into(), "dataset.synthetic.seed=4".into(), "output_dir=out/x".into()],
        )
        .unwrap();
        assert_eq!(cfg.train.learning_rate, 0.001);
        assert_eq!(cfg.dataset.synthetic.as_ref().unwrap().seed, 4);
        assert_eq!(cfg.output_dir, PathBuf::from("out/x"));
        let back = config_from_json(&cfg.to_json(), &[]).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn errors_name_key_paths() {
        let e = config_from_json(BASE, &["train.LR=\"fast\"".into()]).unwrap_err();
        assert!(e.to_string().contains("train.LR"), "{e}");
        assert_eq!(e.exit_code(), 2);
        let e = config_from_json(BASE, &["model.graph_k=64".into()]).unwrap_err();
        assert!(e.to_string().contains("model"), "{e}");
        let e = config_from_json(BASE, &["model.bogus=1".into()]).unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
        let e = config_from_json(BASE, &["benchmark.variants=[\"x+y\"]".into()]).unwrap_err();
        assert!(e.to_string().contains("benchmark.variants"), "{e}");
    }

    #[test]
    fn array_index_override() {
        let cfg = config_from_json(BASE, &["preprocess.split=[0.6,0.2,0.2]".into()]).unwrap();
        assert_eq!(cfg.preprocess.split, [0.6, 0.2, 0.2]);
        let cfg = config_from_json(
            BASE,
            &["benchmark.seeds=[1,2]".into(), "benchmark.seeds.1=7".into()],
        )
        .unwrap();
        assert_eq!(cfg.benchmark.seeds, vec![1, 7]);
        assert!(config_from_json(BASE, &["benchmark.seeds.3=7".into()]).is_err());
    }

    #[test]
    fn variants() {
        let (mut m, mut t) = (ModelConfig::default(), TrainConfig::default());
        apply_variant("pointnet+mlp", &mut m, &mut t).unwrap();
        assert_eq!((m.encoder, m.head), (EncoderKind::Pointnet, HeadKind::Mlp));
        apply_variant("dgcnn-ae", &mut m, &mut t).unwrap();
        assert_eq!(m.bottleneck, BottleneckKind::Global);
        assert_eq!(t.alpha, 0.0);
        assert!(apply_variant("dgcnn", &mut m, &mut t).is_err());
    }
}
