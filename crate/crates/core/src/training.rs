//! Optimization loop: cohort splitting, Adam, per-iteration input
//! resampling, validation-based early stopping and inference.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    denormalize, farthest_point_sample, normalize_points, random_subsample, Cohort,
    NormalizationParams, Point3, PointCloud, Shape, Split,
};
use crate::losses::{chamfer_distance, correspondence_loss_with_grad, LossConfig, LossValue};
use crate::model::{Checkpoint, CorrespondenceMap, Model, ModelConfig, ParamStore};
use crate::rng;
use crate::tensor::Mat;

/// Optimizer and schedule settings. JSON keys follow the usual
/// hyper-parameter tables (`LR`, `B`, `ES`, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(rename = "LR", default = "defaults::lr")]
    pub learning_rate: f64,
    #[serde(rename = "beta1", default = "defaults::beta1")]
    pub adam_beta1: f64,
    #[serde(rename = "beta2", default = "defaults::beta2")]
    pub adam_beta2: f64,
    #[serde(default = "defaults::eps")]
    pub adam_eps: f64,
    #[serde(rename = "B", default = "defaults::batch")]
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    #[serde(rename = "ES", default = "defaults::patience")]
    pub patience_epochs: usize,
    #[serde(default = "defaults::max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
    #[serde(rename = "K", default = "defaults::k")]
    pub k_neighbors: usize,
    /// Target clouds larger than this are reduced by farthest point sampling.
    #[serde(default = "defaults::max_target")]
    pub max_target_points: usize,
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    pub fn lr() -> f64 {
        1e-4
    }
    pub fn beta1() -> f64 {
        0.9
    }
    pub fn beta2() -> f64 {
        0.999
    }
    pub fn eps() -> f64 {
        1e-8
    }
    pub fn batch() -> usize {
        8
    }
    pub fn patience() -> usize {
        100
    }
    pub fn max_epochs() -> usize {
        5000
    }
    pub fn alpha() -> f64 {
        0.1
    }
    pub fn k() -> usize {
        10
    }
    pub fn max_target() -> usize {
        5000
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: defaults::lr(),
            adam_beta1: defaults::beta1(),
            adam_beta2: defaults::beta2(),
            adam_eps: defaults::eps(),
            batch_size: defaults::batch(),
            patience_epochs: defaults::patience(),
            max_epochs: defaults::max_epochs(),
            alpha: defaults::alpha(),
            k_neighbors: defaults::k(),
            max_target_points: defaults::max_target(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn loss(&self) -> LossConfig {
        LossConfig {
            alpha: self.alpha,
            k_neighbors: self.k_neighbors,
        }
    }

    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.learning_rate > 0.0) {
            return bad(format!("LR = {} must be positive", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("beta1 and beta2 must be in [0, 1)".into());
        }
        if self.batch_size == 0 {
            return bad("B must be at least 1".into());
        }
        if self.patience_epochs == 0 {
            return bad("ES must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if self.max_target_points == 0 {
            return bad("max_target_points must be at least 1".into());
        }
        if self.alpha > 0.0 && self.batch_size > 1 {
            self.loss().validate(model.m_output)?;
        } else if !(self.alpha >= 0.0) {
            return bad("alpha must be non-negative".into());
        }
        Ok(())
    }
}

/// Assigns train/val/test labels by a seeded shuffle. Validation and test
/// sizes are `round(ratio · n)` but at least one each.
pub fn split_cohort(cohort: &Cohort, ratios: [f64; 3], seed: u64) -> Result<Cohort> {
    let n = cohort.len();
    if n < 3 {
        return Err(Error::invalid(format!("cannot split {n} shapes three ways")));
    }
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split ratios {ratios:?} must be >= 0 and sum to 1")));
    }
    let n_val = ((ratios[1] * n as f64).round() as usize).max(1);
    let n_test = ((ratios[2] * n as f64).round() as usize).max(1);
    if n_val + n_test >= n {
        return Err(Error::invalid(format!(
            "{n} shapes leave no training shapes after {n_val} val and {n_test} test"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::derived(seed, 0x59117));
    let mut out = cohort.clone();
    for (rank, &i) in order.iter().enumerate() {
        out.shapes[i].split = if rank < n_val {
            Split::Val
        } else if rank < n_val + n_test {
            Split::Test
        } else {
            Split::Train
        };
    }
    Ok(out)
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(params: &ParamStore, cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut [Mat], grads: &[Mat]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let it = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
            for ((p, &g), (m, v)) in it {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Input and reconstruction target for one shape, in normalized units.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub input: PointCloud,
    pub target: Vec<Point3>,
}

fn target_points(shape: &Shape, max_points: usize) -> Result<Vec<Point3>> {
    if shape.surface.count() <= max_points {
        return Ok(shape.surface.points().to_vec());
    }
    Ok(farthest_point_sample(&shape.surface, max_points, 0)?.0.into_points())
}

/// Deterministic network input: all points when at most `n`, otherwise a
/// farthest-point subsample of `n`.
pub fn fixed_input(cloud: &PointCloud, n: usize) -> Result<PointCloud> {
    if cloud.count() <= n {
        return Ok(cloud.clone());
    }
    Ok(farthest_point_sample(cloud, n, 0)?.0)
}

/// Samples of one split with their full input clouds.
pub fn split_samples(cohort: &Cohort, split: Split, max_target: usize) -> Result<Vec<Sample>> {
    cohort
        .split(split)
        .map(|s| {
            Ok(Sample {
                id: s.id.clone(),
                input: s.input_cloud().clone(),
                target: target_points(s, max_target)?,
            })
        })
        .collect()
}

/// Mean Chamfer distance between predictions on fixed inputs and targets.
pub fn validate(model: &Model, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("validation set is empty"));
    }
    let n = model.config().n_input;
    let mut total = 0.0;
    for s in samples {
        let out = model.forward(fixed_input(&s.input, n)?.points())?.points;
        total += chamfer_distance(&out, &s.target)?;
    }
    Ok(total / samples.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_cd: f64,
}

pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut buf = String::from("epoch,train_loss,val_cd\n");
    for r in history {
        buf.push_str(&format!("{},{:.12e},{:.12e}\n", r.epoch, r.train_loss, r.val_cd));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(buf.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

/// Result of a training run; `model` carries the best-validation parameters.
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_cd: f64,
    pub initial_val_cd: f64,
}

/// Early-stopping bookkeeping.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    pub since_improvement: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_improvement: 0,
        }
    }

    /// Records an epoch's score; returns whether it is a new best.
    pub fn observe(&mut self, epoch: usize, value: f64) -> bool {
        if value < self.best {
            self.best = value;
            self.best_epoch = epoch;
            self.since_improvement = 0;
            true
        } else {
            self.since_improvement += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since_improvement >= self.patience
    }
}

/// One optimizer step on a batch. Returns the batch loss.
pub fn train_step(
    model: &mut Model,
    adam: &mut Adam,
    inputs: &[PointCloud],
    targets: &[&[Point3]],
    loss: &LossConfig,
) -> Result<LossValue> {
    let passes = inputs
        .iter()
        .map(|x| model.forward_graph(x.points()))
        .collect::<Result<Vec<_>>>()?;
    let outputs: Vec<Vec<Point3>> = passes.iter().map(|p| p.output_points()).collect();
    let (value, grads) = correspondence_loss_with_grad(&outputs, targets, loss)?;
    if !value.total.is_finite() {
        return Ok(value);
    }
    let mut slots = model.params().zeros_like();
    for (pass, g) in passes.iter().zip(grads) {
        let seed = Mat::from_points(&g);
        pass.graph
            .backward(pass.output, seed)
            .accumulate_params(&pass.graph, &mut slots);
    }
    adam.step(model.params_mut().values_mut(), &slots);
    Ok(value)
}

pub fn train(model_config: &ModelConfig, cfg: &TrainConfig, cohort: &Cohort) -> Result<TrainOutcome> {
    train_with_observer(model_config, cfg, cohort, &mut |_| {})
}

/// Full training run; `observer` sees every epoch record as it is produced.
pub fn train_with_observer(
    model_config: &ModelConfig,
    cfg: &TrainConfig,
    cohort: &Cohort,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate(model_config)?;
    let train_set = split_samples(cohort, Split::Train, cfg.max_target_points)?;
    let val_set = split_samples(cohort, Split::Val, cfg.max_target_points)?;
    if train_set.is_empty() {
        return Err(Error::invalid("cohort has no training shapes"));
    }
    let mut model = Model::new(model_config.clone())?;
    let n = model_config.n_input;
    let loss_cfg = cfg.loss();
    let mut adam = Adam::new(model.params(), cfg);
    let mut rng = rng::derived(cfg.seed, 0x7a1);
    let mut stopping = EarlyStopping::new(cfg.patience_epochs);
    let initial_val_cd = validate(&model, &val_set)?;
    let mut best_params = model.params().clone();
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let inputs = chunk
                .iter()
                .map(|&i| {
                    let c = &train_set[i].input;
                    random_subsample(c, n.min(c.count()), &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let targets: Vec<&[Point3]> = chunk.iter().map(|&i| &train_set[i].target[..]).collect();
            let diverged = |v: LossValue| Error::Diverged {
                epoch,
                batch: bi,
                loss: v.total,
                cd: v.cd,
                me: v.me,
            };
            let value = match train_step(&mut model, &mut adam, &inputs, &targets, &loss_cfg) {
                Ok(v) => v,
                Err(Error::NonFinite(_)) => {
                    return Err(diverged(LossValue {
                        total: f64::NAN,
                        cd: f64::NAN,
                        me: f64::NAN,
                    }))
                }
                Err(e) => return Err(e),
            };
            if !value.total.is_finite() || !model.params().all_finite() {
                return Err(diverged(value));
            }
            loss_sum += value.total;
            batches += 1;
        }
        let val_cd = validate(&model, &val_set)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_cd,
        };
        observer(&record);
        history.push(record);
        if stopping.observe(epoch, val_cd) {
            best_params = model.params().clone();
        }
        if stopping.should_stop() {
            break;
        }
    }
    *model.params_mut() = best_params;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch: stopping.best_epoch,
        best_val_cd: stopping.best,
        initial_val_cd,
    })
}

/// Correspondences for one new shape.
#[derive(Debug, Clone)]
pub struct Inference {
    /// Output points in millimetres.
    pub points: Vec<Point3>,
    pub map: Option<CorrespondenceMap>,
    pub seconds: f64,
}

/// Predicts correspondences for a raw (millimetre) point set using the
/// checkpoint's normalization.
pub fn infer(ckpt: &Checkpoint, points_mm: &[Point3]) -> Result<Inference> {
    let norm = ckpt.normalization.unwrap_or_else(NormalizationParams::identity);
    let start = Instant::now();
    let cloud = PointCloud::new(normalize_points(points_mm, &norm))?;
    let input = fixed_input(&cloud, ckpt.model.config().n_input)?;
    let pred = ckpt.model.forward(input.points())?;
    Ok(Inference {
        points: denormalize(&pred.points, &norm),
        map: pred.map,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Predicts correspondences for a cohort member (normalized units).
pub fn predict_shape(model: &Model, shape: &Shape) -> Result<Vec<Point3>> {
    let input = fixed_input(shape.input_cloud(), model.config().n_input)?;
    Ok(model.forward(input.points())?.points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Shape;
    use crate::model::{EncoderKind, HeadKind};
    use rand::Rng;

    fn blob(n: usize, seed: u64, scale: f64) -> PointCloud {
        let mut r = rng::seeded(seed);
        PointCloud::normalized(
            (0..n)
                .map(|_| std::array::from_fn(|_| scale * r.random_range(-1.0..1.0)))
                .collect(),
        )
        .unwrap()
    }

    fn cohort(n: usize) -> Cohort {
        Cohort::new(
            (0..n)
                .map(|i| Shape::from_cloud(format!("s{i}"), blob(40, i as u64, 0.5 + 0.04 * (i % 10) as f64)))
                .collect(),
        )
    }

    #[test]
    fn split_sizes() {
        let sizes = |n: usize| {
            let c = split_cohort(&cohort(n), [0.8, 0.1, 0.1], 1).unwrap();
            (c.count(Split::Train), c.count(Split::Val), c.count(Split::Test))
        };
        assert_eq!(sizes(40), (32, 4, 4));
        assert_eq!(sizes(10), (8, 1, 1));
        assert_eq!(sizes(3), (1, 1, 1));
        assert!(split_cohort(&cohort(2), [0.8, 0.1, 0.1], 1).is_err());
        let a = split_cohort(&cohort(20), [0.8, 0.1, 0.1], 5).unwrap();
        assert_eq!(a, split_cohort(&cohort(20), [0.8, 0.1, 0.1], 5).unwrap());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![Mat::from_vec(1, 3, vec![1.0, 1.0, 1.0])];
        let mut adam = Adam {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 0.0,
            step: 0,
            m: vec![Mat::zeros(1, 3)],
            v: vec![Mat::zeros(1, 3)],
        };
        adam.step(&mut p, &[Mat::from_vec(1, 3, vec![2.0, -0.5, 1e-3])]);
        let expect = [0.9, 1.1, 0.9];
        for (a, e) in p[0].data().iter().zip(expect) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn early_stopping_counts_from_best() {
        let mut s = EarlyStopping::new(3);
        let vals = [5.0, 4.0, 4.5, 4.0, 4.2, 3.0, 3.5, 3.5, 3.5, 1.0];
        let mut stopped = None;
        for (e, v) in vals.iter().enumerate() {
            s.observe(e + 1, *v);
            if s.should_stop() {
                stopped = Some(e + 1);
                break;
            }
        }
        // best at epoch 2; epochs 3, 4 (a tie) and 5 do not improve
        assert_eq!(s.best_epoch, 2);
        assert_eq!(stopped, Some(5));
    }

    #[test]
    fn validate_matches_hand_composed_chamfer() {
        let model = Model::new(ModelConfig {
            encoder: EncoderKind::Pointnet,
            head: HeadKind::Mlp,
            n_input: 16,
            m_output: 8,
            feature_dim: 4,
            hidden_dim: 4,
            ..ModelConfig::default()
        })
        .unwrap();
        let samples: Vec<Sample> = (0..2)
            .map(|i| Sample {
                id: format!("v{i}"),
                input: blob(30, 10 + i, 0.8),
                target: blob(25, 20 + i, 0.8).into_points(),
            })
            .collect();
        let v = validate(&model, &samples).unwrap();
        let mut expect = 0.0;
        for s in &samples {
            let (x, _) = farthest_point_sample(&s.input, 16, 0).unwrap();
            let out = model.forward(x.points()).unwrap().points;
            expect += chamfer_distance(&out, &s.target).unwrap();
        }
        assert!((v - expect / 2.0).abs() < 1e-14);
        assert_eq!(v, validate(&model, &samples).unwrap());
        assert!(validate(&model, &[]).is_err());
    }

    #[test]
    fn config_keys() {
        let c: TrainConfig =
            serde_json::from_str(r#"{"LR":0.001,"B":4,"ES":10,"alpha":0.0,"K":5,"beta1":0.8}"#)
                .unwrap();
        assert_eq!((c.learning_rate, c.batch_size, c.patience_epochs), (0.001, 4, 10));
        assert_eq!((c.alpha, c.k_neighbors, c.adam_beta1), (0.0, 5, 0.8));
        let d = TrainConfig::default();
        assert_eq!((d.learning_rate, d.batch_size, d.patience_epochs), (1e-4, 8, 100));
        assert!(serde_json::from_str::<TrainConfig>(r#"{"lr":1}"#).is_err());
    }

    #[test]
    fn short_run_records_history_and_returns_best() {
        let c = split_cohort(&cohort(8), [0.5, 0.25, 0.25], 3).unwrap();
        let mc = ModelConfig {
            encoder: EncoderKind::Dgcnn,
            head: HeadKind::Attn,
            n_input: 24,
            m_output: 12,
            feature_dim: 8,
            graph_k: 4,
            hidden_dim: 8,
            sfa_blocks: 1,
            attention_heads: 2,
            seed: 1,
            ..ModelConfig::default()
        };
        let tc = TrainConfig {
            learning_rate: 1e-2,
            batch_size: 2,
            max_epochs: 6,
            patience_epochs: 3,
            k_neighbors: 4,
            seed: 2,
            ..TrainConfig::default()
        };
        let out = train(&mc, &tc, &c).unwrap();
        assert!(!out.history.is_empty() && out.history.len() <= 6);
        let val = split_samples(&c, Split::Val, 5000).unwrap();
        assert_eq!(validate(&out.model, &val).unwrap(), out.best_val_cd);
        let again = train(&mc, &tc, &c).unwrap();
        assert_eq!(again.history, out.history);
    }
}
