//! The pipeline commands. Every command is a pure function of the config,
//! its input files and seeds, and writes a config echo next to its outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use shapecorr::corruption::{apply_corruption, subset_training, CorruptionSpec, TrainSubset};
use shapecorr::geometry::io::{list_shape_files, load_cloud, load_mesh, read_points, save_mesh_ply, write_points};
use shapecorr::geometry::{align_cohort, denormalize, normalize_cohort, Cohort, NormalizationParams, Shape, Split};
use shapecorr::losses::{surface_metrics, SurfaceMetrics};
use shapecorr::model::{load_checkpoint, save_checkpoint, Checkpoint, Model};
use shapecorr::rng;
use shapecorr::ssm::{
    compactness, fit_pca, generalization, mode_walk, save_pca, specificity, write_variance_csv, Compactness,
    Generalization, Specificity,
};
use shapecorr::synthetic::{generate_cohort, write_cohort};
use shapecorr::training::{infer, predict_shape, split_cohort, train_with_observer, write_history_csv, EpochRecord};

use crate::config::{ExperimentConfig, Metric};
use crate::error::{CliError, CliResult};

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write_text(path, &(serde_json::to_string_pretty(value).expect("serializable") + "\n"))
}

/// Writes `config.json` into `dir`.
pub fn echo_config(dir: &Path, cfg: &ExperimentConfig) -> CliResult<()> {
    write_text(&dir.join("config.json"), &(cfg.to_json() + "\n"))
}

fn split_name(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Val => "val",
        Split::Test => "test",
        Split::Unassigned => "unassigned",
    }
}

/// Loads the raw cohort in millimetres.
pub fn load_dataset(cfg: &ExperimentConfig) -> CliResult<Cohort> {
    if let Some(spec) = &cfg.dataset.synthetic {
        return Ok(generate_cohort(spec)?.cohort);
    }
    let dir = cfg.dataset.directory.as_ref().expect("validated dataset");
    let files = list_shape_files(dir)?;
    if files.is_empty() {
        return Err(CliError::Config(format!(
            "dataset.directory: no shape files in {}",
            dir.display()
        )));
    }
    let mut shapes = Vec::with_capacity(files.len());
    for f in files {
        let id = f.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let ext = f.extension().unwrap_or_default().to_string_lossy().to_lowercase();
        shapes.push(if ext == "ply" || ext == "obj" {
            Shape::from_mesh(id, load_mesh(&f)?)?
        } else {
            Shape::from_cloud(id, load_cloud(&f)?)
        });
    }
    Ok(Cohort::new(shapes))
}

/// A cohort ready for training, plus the millimetre version it came from.
pub struct Prepared {
    /// Aligned and corrupted, in millimetres, with split labels.
    pub raw: Cohort,
    /// Normalized, split and training-subset applied.
    pub cohort: Cohort,
    pub normalization: NormalizationParams,
    pub reference: Option<usize>,
}

/// Loads the dataset and, when configured, rigidly aligns it (mm).
/// Returns the cohort and the index of the alignment reference.
pub fn load_aligned(cfg: &ExperimentConfig) -> CliResult<(Cohort, Option<usize>)> {
    let cohort = load_dataset(cfg)?;
    if !cfg.preprocess.align {
        return Ok((cohort, None));
    }
    let (aligned, r) = align_cohort(&cohort, cfg.preprocess.icp_max_iters, cfg.preprocess.icp_tol)?;
    Ok((aligned, Some(r)))
}

/// Corrupts (mm), splits, normalizes, then restricts the training set.
pub fn prepare_aligned(
    cfg: &ExperimentConfig,
    aligned: &Cohort,
    reference: Option<usize>,
) -> CliResult<Prepared> {
    let per_shape = CorruptionSpec {
        train_subset_size: TrainSubset::All,
        ..cfg.corruption.clone()
    };
    let cohort = apply_corruption(aligned, &per_shape)?;
    let raw = split_cohort(&cohort, cfg.preprocess.split, cfg.preprocess.split_seed)?;
    let (mut normalized, normalization) = normalize_cohort(&raw)?;
    if let TrainSubset::Size(n) = cfg.corruption.train_subset_size {
        normalized = subset_training(&normalized, n, cfg.corruption.seed)?;
    }
    Ok(Prepared {
        raw,
        cohort: normalized,
        normalization,
        reference,
    })
}

/// Load, align, corrupt (mm), split, normalize, then restrict the training set.
pub fn prepare(cfg: &ExperimentConfig) -> CliResult<Prepared> {
    let (aligned, reference) = load_aligned(cfg)?;
    prepare_aligned(cfg, &aligned, reference)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PreprocessSummary {
    pub shapes: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub reference_shape: Option<String>,
    pub normalization: NormalizationParams,
}

/// Writes the aligned, normalized cohort with its split table.
pub fn cmd_preprocess(cfg: &ExperimentConfig) -> CliResult<PreprocessSummary> {
    let out = cfg.resolved_output_dir().join("preprocess");
    let p = prepare(cfg)?;
    let mut splits = String::from("id,split\n");
    for s in &p.cohort.shapes {
        match &s.mesh {
            Some(m) => save_mesh_ply(out.join("shapes").join(format!("{}.ply", s.id)), m)?,
            None => write_points(out.join("shapes").join(format!("{}.particles", s.id)), s.surface.points())?,
        }
        splits.push_str(&format!("{},{}\n", s.id, split_name(s.split)));
    }
    write_text(&out.join("splits.csv"), &splits)?;
    let summary = PreprocessSummary {
        shapes: p.cohort.len(),
        train: p.cohort.count(Split::Train),
        val: p.cohort.count(Split::Val),
        test: p.cohort.count(Split::Test),
        reference_shape: p.reference.map(|r| p.raw.shapes[r].id.clone()),
        normalization: p.normalization,
    };
    write_json(&out.join("normalization.json"), &p.normalization)?;
    write_json(&out.join("summary.json"), &summary)?;
    echo_config(&out, cfg)?;
    Ok(summary)
}

/// Writes every shape's corrupted input cloud (mm) for inspection.
pub fn cmd_corrupt(cfg: &ExperimentConfig) -> CliResult<usize> {
    let out = cfg.resolved_output_dir().join("corrupted");
    let p = prepare(cfg)?;
    let kept: std::collections::HashSet<&str> = p.cohort.shapes.iter().map(|s| s.id.as_str()).collect();
    let mut n = 0;
    for s in p.raw.shapes.iter().filter(|s| kept.contains(s.id.as_str())) {
        write_points(out.join(format!("{}.particles", s.id)), s.input_cloud().points())?;
        n += 1;
    }
    echo_config(&out, cfg)?;
    Ok(n)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub variant: String,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_cd: f64,
    pub initial_val_cd: f64,
    pub seconds: f64,
    pub checkpoint: PathBuf,
}

pub struct Trained {
    pub summary: TrainSummary,
    pub checkpoint: Checkpoint,
    pub prepared: Prepared,
    pub history: Vec<EpochRecord>,
}

/// Trains on a prepared cohort and writes checkpoint, history and summary to `out`.
pub fn train_prepared(
    cfg: &ExperimentConfig,
    prepared: Prepared,
    out: &Path,
    log: &mut dyn FnMut(&EpochRecord),
) -> CliResult<Trained> {
    let start = Instant::now();
    let outcome = train_with_observer(&cfg.model, &cfg.train, &prepared.cohort, log)?;
    let path = out.join("model.ckpt");
    let checkpoint = Checkpoint {
        model: outcome.model,
        normalization: Some(prepared.normalization),
        extras: serde_json::json!({
            "train": cfg.train,
            "best_epoch": outcome.best_epoch,
            "best_val_cd": outcome.best_val_cd,
        }),
    };
    save_checkpoint(&path, &checkpoint)?;
    write_history_csv(&out.join("history.csv"), &outcome.history)?;
    let summary = TrainSummary {
        variant: cfg.model.variant_name(),
        epochs_run: outcome.history.len(),
        best_epoch: outcome.best_epoch,
        best_val_cd: outcome.best_val_cd,
        initial_val_cd: outcome.initial_val_cd,
        seconds: start.elapsed().as_secs_f64(),
        checkpoint: path,
    };
    write_json(&out.join("train_summary.json"), &summary)?;
    echo_config(out, cfg)?;
    Ok(Trained {
        summary,
        checkpoint,
        prepared,
        history: outcome.history,
    })
}

pub fn cmd_train(cfg: &ExperimentConfig, log: &mut dyn FnMut(&EpochRecord)) -> CliResult<Trained> {
    let prepared = prepare(cfg)?;
    train_prepared(cfg, prepared, &cfg.resolved_output_dir(), log)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct InferRecord {
    pub input: PathBuf,
    pub output: PathBuf,
    pub points: usize,
    pub seconds: f64,
}

/// Predicts correspondences (mm) for each input file. Point files are used
/// directly; meshes contribute their vertices.
pub fn cmd_infer(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    inputs: &[PathBuf],
    write_maps: bool,
) -> CliResult<Vec<InferRecord>> {
    let ckpt = load_checkpoint(checkpoint)?;
    let out = cfg.resolved_output_dir().join("infer");
    let mut files = Vec::new();
    for i in inputs {
        if i.is_dir() {
            files.extend(list_shape_files(i)?);
        } else {
            files.push(i.clone());
        }
    }
    let mut records = Vec::with_capacity(files.len());
    for f in files {
        let ext = f.extension().unwrap_or_default().to_string_lossy().to_lowercase();
        let pts = if ext == "ply" || ext == "obj" {
            load_mesh(&f)?.vertices().to_vec()
        } else {
            read_points(&f)?
        };
        let res = infer(&ckpt, &pts)?;
        let stem = f.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let target = out.join(format!("{stem}.particles"));
        write_points(&target, &res.points)?;
        if write_maps {
            if let Some(map) = &res.map {
                map.save_csv(&out.join(format!("{stem}_map.csv")))?;
            }
        }
        records.push(InferRecord {
            input: f,
            output: target,
            points: res.points.len(),
            seconds: res.seconds,
        });
    }
    write_json(&out.join("infer_summary.json"), &records)?;
    echo_config(&out, cfg)?;
    Ok(records)
}

/// Predicted correspondences for every shape of a cohort, in mm.
pub fn predict_cohort(model: &Model, prepared: &Prepared) -> CliResult<Vec<(Shape, Vec<[f64; 3]>)>> {
    prepared
        .cohort
        .shapes
        .iter()
        .map(|s| {
            let pred = predict_shape(model, s)?;
            Ok((s.clone(), denormalize(&pred, &prepared.normalization)))
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluateSummary {
    pub test_shapes: usize,
    pub mean: SurfaceMetrics,
    pub metrics_csv: PathBuf,
    pub correspondence_dir: PathBuf,
}

/// Surface metrics of test predictions against the clean surfaces (mm),
/// plus correspondence exports for every split.
pub fn evaluate_model(
    cfg: &ExperimentConfig,
    model: &Model,
    prepared: &Prepared,
    out: &Path,
) -> CliResult<(EvaluateSummary, Vec<SurfaceMetrics>)> {
    let preds = predict_cohort(model, prepared)?;
    let corr_dir = out.join("correspondences");
    let mut rows = Vec::new();
    let want_p2f = cfg.evaluation.metrics.contains(&Metric::P2f);
    for (shape, pred) in &preds {
        write_points(
            corr_dir.join(split_name(shape.split)).join(format!("{}.particles", shape.id)),
            pred,
        )?;
        if shape.split != Split::Test {
            continue;
        }
        let surface = denormalize(shape.surface.points(), &prepared.normalization);
        let mesh = match (&shape.mesh, want_p2f) {
            (Some(m), true) => Some(m.map_vertices(|p| prepared.normalization.inverse(p))),
            _ => None,
        };
        let mut m = surface_metrics(&shape.id, pred, &surface, mesh.as_ref())?;
        if !cfg.evaluation.metrics.contains(&Metric::Emd) {
            m.emd_mm = f64::NAN;
        }
        rows.push(m);
    }
    let mean = SurfaceMetrics::mean(&rows)
        .ok_or_else(|| CliError::Config("preprocess.split: the test split is empty".into()))?;
    let mut csv = format!("{}\n", SurfaceMetrics::CSV_HEADER);
    for r in rows.iter().chain(std::iter::once(&mean)) {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    let metrics_csv = out.join("metrics.csv");
    write_text(&metrics_csv, &csv)?;
    let summary = EvaluateSummary {
        test_shapes: rows.len(),
        mean,
        metrics_csv,
        correspondence_dir: corr_dir,
    };
    write_json(&out.join("evaluate_summary.json"), &summary)?;
    Ok((summary, rows))
}

pub fn cmd_evaluate(cfg: &ExperimentConfig, checkpoint: &Path) -> CliResult<EvaluateSummary> {
    let ckpt = load_checkpoint(checkpoint)?;
    let prepared = prepare(cfg)?;
    let out = cfg.resolved_output_dir().join("evaluate");
    let (summary, _) = evaluate_model(cfg, &ckpt.model, &prepared, &out)?;
    echo_config(&out, cfg)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub train_shapes: usize,
    pub test_shapes: usize,
    pub compactness: Compactness,
    pub generalization: Option<Generalization>,
    pub specificity: Specificity,
}

fn read_sets(dir: &Path) -> CliResult<Vec<Vec<[f64; 3]>>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "particles"))
        .collect();
    files.sort();
    files.iter().map(|f| Ok(read_points(f)?)).collect()
}

/// Shape statistics of a correspondence directory.
///
/// With `train/` and `test/` subdirectories the model is fitted on `train`
/// and generalization is measured on `test`; otherwise every `.particles`
/// file in the directory is a training set.
pub fn cmd_analyze(cfg: &ExperimentConfig, corr_dir: &Path) -> CliResult<AnalysisSummary> {
    let (train, test) = if corr_dir.join("train").is_dir() {
        let test_dir = corr_dir.join("test");
        let test = if test_dir.is_dir() { read_sets(&test_dir)? } else { Vec::new() };
        (read_sets(&corr_dir.join("train"))?, test)
    } else {
        (read_sets(corr_dir)?, Vec::new())
    };
    let ev = &cfg.evaluation;
    let pca = fit_pca(&train)?;
    let out = cfg.resolved_output_dir().join("analysis");
    let comp = compactness(&pca, ev.variance_threshold);
    let gen = if test.is_empty() {
        None
    } else {
        Some(generalization(&pca, &test, ev.variance_threshold)?)
    };
    let spec = specificity(
        &pca,
        &train,
        ev.specificity_samples,
        ev.variance_threshold,
        &mut rng::seeded(ev.seed),
    )?;
    save_pca(&out.join("pca.bin"), &pca)?;
    write_variance_csv(&out.join("variance.csv"), &pca)?;
    write_points(out.join("mean_shape.particles"), &pca.mean_shape())?;
    for mode in 0..ev.mode_count.min(pca.modes.len()) {
        let walk = mode_walk(&pca, mode, &ev.mode_steps)?;
        for (j, pos) in walk.positions.iter().enumerate() {
            write_points(
                out.join("modes").join(format!("mode_{:02}_step_{:02}.particles", mode + 1, j)),
                pos,
            )?;
        }
    }
    let summary = AnalysisSummary {
        train_shapes: train.len(),
        test_shapes: test.len(),
        compactness: comp,
        generalization: gen,
        specificity: spec,
    };
    write_json(&out.join("analysis.json"), &summary)?;
    echo_config(&out, cfg)?;
    Ok(summary)
}

/// Writes the generated cohort (meshes and `latents.csv`) when the dataset is synthetic.
pub fn export_synthetic(cfg: &ExperimentConfig, dir: &Path) -> CliResult<bool> {
    match &cfg.dataset.synthetic {
        Some(spec) => {
            write_cohort(dir, &generate_cohort(spec)?)?;
            Ok(true)
        }
        None => Ok(false),
    }
}
