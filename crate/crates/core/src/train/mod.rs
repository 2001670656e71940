//! Run configuration, mini-batch SGD training, evaluation under temporal
//! perturbation, metric logging and checkpoints.

mod checkpoint;
mod metrics;

pub use checkpoint::{
    load_checkpoint, read_manifest, save_checkpoint, ArrayRecord, Checkpoint, CheckpointManifest, CHECKPOINT_VERSION,
    MANIFEST_FILE, WEIGHTS_FILE,
};
pub use metrics::{accuracy, average_precision, mean_average_precision, MetricLog, MetricRow, METRIC_HEADER};

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::track_node_distances;
use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::model::{ActivityModel, AnyModel, InitStrategy, LabelMode, ModelKind, VideoGraphConfig};
use crate::optim::{Sgd, SgdConfig};
use crate::scalar::Scalar;
use crate::synthetic::{derive_seed, perturb_order, Label, PerturbMode, SyntheticSpec, VideoSample};
use crate::tensor::Tensor;

const EVAL_BATCH: usize = 32;
/// Upper bound on the number of feature vectors handed to k-means node init.
const KMEANS_SAMPLE_CAP: usize = 4096;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// Everything needed to reproduce a training run. The architecture keys of
/// [`VideoGraphConfig`] sit at the top level of the JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub model: VideoGraphConfig,
    #[serde(default = "default_kind")]
    pub model_kind: ModelKind,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    /// Training manifest (JSON lines).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_data: Option<PathBuf>,
    /// Validation manifest; when absent an 80/20 split of the training data is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_data: Option<PathBuf>,
    #[serde(default = "default_perturbation")]
    pub perturbation: PerturbMode,
    #[serde(default)]
    pub precision: Precision,
    /// Generator settings used by `gen-data`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
}

fn default_kind() -> ModelKind {
    ModelKind::VideoGraph
}

fn default_lr() -> f64 {
    SgdConfig::default().learning_rate
}

fn default_momentum() -> f64 {
    SgdConfig::default().momentum
}

fn default_weight_decay() -> f64 {
    SgdConfig::default().weight_decay
}

fn default_perturbation() -> PerturbMode {
    PerturbMode::Natural
}

impl RunConfig {
    /// Desk-scale run: 200 epochs, batch 8.
    pub fn desk() -> Self {
        Self::with_model(VideoGraphConfig::desk(), 200, 8)
    }

    /// Full-size run: 500 epochs, batch 32.
    pub fn full() -> Self {
        Self::with_model(VideoGraphConfig::full(), 500, 32)
    }

    pub fn with_model(model: VideoGraphConfig, epochs: usize, batch_size: usize) -> Self {
        let sgd = SgdConfig::default();
        RunConfig {
            model,
            model_kind: ModelKind::VideoGraph,
            epochs,
            batch_size,
            learning_rate: sgd.learning_rate,
            momentum: sgd.momentum,
            weight_decay: sgd.weight_decay,
            train_data: None,
            val_data: None,
            perturbation: PerturbMode::Natural,
            precision: Precision::F32,
            synthetic: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.model.seed
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig { learning_rate: self.learning_rate, momentum: self.momentum, weight_decay: self.weight_decay }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch_size must be positive".into()));
        }
        self.sgd().validate()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Checks that every sample matches the configured shape and label mode.
pub fn check_dataset<T: Scalar>(cfg: &VideoGraphConfig, samples: &[VideoSample<T>]) -> Result<()> {
    let want = [cfg.timesteps, cfg.height, cfg.width, cfg.channels];
    for (i, s) in samples.iter().enumerate() {
        if s.features.shape() != want {
            return Err(Error::shape(
                "dataset",
                format!("sample {i} has shape {:?}, config expects {want:?}", s.features.shape()),
            ));
        }
        let classes: &[usize] = match (&s.label, cfg.label_mode) {
            (Label::Single(c), LabelMode::Single) => std::slice::from_ref(c),
            (Label::Multi(cs), LabelMode::Multi) => cs,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "sample {i} label {:?} does not match label mode {:?}",
                    s.label, cfg.label_mode
                )))
            }
        };
        if let Some(c) = classes.iter().find(|&&c| c >= cfg.num_classes) {
            return Err(Error::InvalidArgument(format!(
                "sample {i} has class {c}, config has {} classes",
                cfg.num_classes
            )));
        }
    }
    Ok(())
}

/// Deterministic 80/20 split by seeded shuffle: `(train, val)`.
pub fn split_train_val<S: Clone>(samples: &[S], seed: u64) -> (Vec<S>, Vec<S>) {
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5_9117)));
    let n_val = samples.len() / 5;
    let val = idx[..n_val].iter().map(|&i| samples[i].clone()).collect();
    let train = idx[n_val..].iter().map(|&i| samples[i].clone()).collect();
    (train, val)
}

/// Stacks the features of `samples[idx]` into `[B, T, H, W, C]`.
pub fn stack_batch<T: Scalar>(samples: &[VideoSample<T>], idx: &[usize]) -> Tensor<T> {
    let mut shape = vec![idx.len()];
    shape.extend_from_slice(samples[idx[0]].features.shape());
    let mut data = Vec::with_capacity(shape.iter().product());
    for &i in idx {
        data.extend_from_slice(samples[i].features.data());
    }
    Tensor::new(shape, data).expect("features share one shape")
}

/// Every spatial feature vector of the training set as an `M × C` matrix,
/// subsampled with a fixed stride when larger than the k-means cap.
pub fn feature_sample<T: Scalar>(samples: &[VideoSample<T>], channels: usize) -> Tensor<T> {
    let all: Vec<&[T]> = samples.iter().flat_map(|s| s.features.data().chunks(channels)).collect();
    let stride = all.len().div_ceil(KMEANS_SAMPLE_CAP).max(1);
    let picked: Vec<T> = all.iter().step_by(stride).flat_map(|r| r.iter().copied()).collect();
    let m = picked.len() / channels;
    Tensor::new([m, channels], picked).expect("finite features")
}

/// Sample order for one epoch; depends only on `(seed, epoch)` so a resumed
/// run sees the same batches.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed ^ 0x5eed_5407, epoch as u64)));
    idx
}

/// Consecutive batches of `batch_size`; a trailing batch of one sample is
/// merged into its predecessor because batch statistics need two samples.
pub fn batch_ranges(n: usize, batch_size: usize) -> Vec<std::ops::Range<usize>> {
    let mut out: Vec<std::ops::Range<usize>> = (0..n).step_by(batch_size).map(|s| s..(s + batch_size).min(n)).collect();
    if out.len() > 1 && out.last().map(|r| r.len()) == Some(1) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").end = last.end;
    }
    out
}

fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Result of [`evaluate`].
#[derive(Clone, Debug)]
pub struct Evaluation<T> {
    /// Accuracy (single-label) or mAP (multi-label).
    pub metric: f64,
    /// Class scores `[V, K]`.
    pub scores: Tensor<T>,
    /// Argmax class per sample.
    pub predictions: Vec<usize>,
}

/// Scores `samples` with `predict` after applying `perturbation` to each
/// sample's time axis. Random orders are seeded per sample from `seed`.
/// Batches are scored in parallel; results do not depend on the thread count.
pub fn evaluate_with<T: Scalar>(
    predict: impl Fn(&Tensor<T>) -> Result<Tensor<T>> + Sync,
    label_mode: LabelMode,
    num_classes: usize,
    samples: &[VideoSample<T>],
    perturbation: PerturbMode,
    seed: u64,
) -> Result<Evaluation<T>> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty dataset".into()));
    }
    let k = num_classes;
    let starts: Vec<usize> = (0..samples.len()).step_by(EVAL_BATCH).collect();
    let chunks = starts
        .par_iter()
        .map(|&start| {
            let end = (start + EVAL_BATCH).min(samples.len());
            let chunk: Vec<VideoSample<T>> = (start..end)
                .map(|i| match perturbation {
                    PerturbMode::Natural => samples[i].clone(),
                    mode => perturb_order(&samples[i], mode, derive_seed(seed, i as u64)),
                })
                .collect();
            let idx: Vec<usize> = (0..chunk.len()).collect();
            let s = predict(&stack_batch(&chunk, &idx))?;
            if s.shape() != [chunk.len(), k] {
                return Err(Error::shape(
                    "evaluate",
                    format!("predictor returned {:?}, expected [{}, {k}]", s.shape(), chunk.len()),
                ));
            }
            Ok(s.into_data())
        })
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<T> = chunks.into_iter().flatten().collect();
    let scores = Tensor::new([samples.len(), k], scores)?;
    let predictions: Vec<usize> = scores.data().chunks(k).map(argmax).collect();
    let metric = match label_mode {
        LabelMode::Single => {
            let labels = samples
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    s.label.single().ok_or_else(|| {
                        Error::InvalidArgument(format!("sample {i} is multi-label but the model is single-label"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            accuracy(&predictions, &labels)
        }
        LabelMode::Multi => {
            let mut labels = Vec::with_capacity(samples.len() * k);
            for (i, s) in samples.iter().enumerate() {
                if let Label::Single(_) = s.label {
                    return Err(Error::InvalidArgument(format!(
                        "sample {i} is single-label but the model is multi-label"
                    )));
                }
                labels.extend(s.label.indicator(k));
            }
            let flat: Vec<f64> = scores.data().iter().map(|v| v.to_f64_lossy()).collect();
            mean_average_precision(&flat, &labels, k)?
        }
    };
    Ok(Evaluation { metric, scores, predictions })
}

/// Eval-mode scoring of `model` on `samples` under `perturbation`.
pub fn evaluate<T: Scalar, M: ActivityModel<T> + Sync + ?Sized>(
    model: &M,
    samples: &[VideoSample<T>],
    perturbation: PerturbMode,
    seed: u64,
) -> Result<Evaluation<T>> {
    let cfg = model.config();
    evaluate_with(|b| model.predict(b), cfg.label_mode, cfg.num_classes, samples, perturbation, seed)
}

fn node_distance<T: Scalar>(model: &AnyModel<T>) -> Result<f64> {
    match model.as_videograph() {
        Some(vg) => track_node_distances(&vg.transformed_nodes()?),
        None => Ok(f64::NAN),
    }
}

/// Owns a model and its optimizer through a training run.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    config: RunConfig,
    model: AnyModel<T>,
    optimizer: Sgd<T>,
    epoch: usize,
    log: MetricLog,
}

impl<T: Scalar> Trainer<T> {
    /// Fresh model. k-means node initialization clusters the training features.
    pub fn new(config: RunConfig, train: &[VideoSample<T>]) -> Result<Self> {
        config.validate()?;
        check_dataset(&config.model, train)?;
        let sample = (config.model.init_strategy == InitStrategy::Kmeans && config.model_kind == ModelKind::VideoGraph)
            .then(|| feature_sample(train, config.model.channels));
        let model = AnyModel::build(config.model_kind, config.model.clone(), sample.as_ref())?;
        let optimizer = Sgd::new(config.sgd(), model.params())?;
        let mut log = MetricLog::new();
        log.initial_node_distance = Some(node_distance(&model)?).filter(|d| !d.is_nan());
        Ok(Trainer { config, model, optimizer, epoch: 0, log })
    }

    /// Continues from a checkpoint; the metric log starts empty.
    pub fn resume(dir: impl AsRef<Path>) -> Result<Self> {
        let ck = load_checkpoint::<T>(dir)?;
        Ok(Trainer {
            config: ck.config,
            model: ck.model,
            optimizer: ck.optimizer,
            epoch: ck.epoch,
            log: MetricLog::new(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    /// Changes the target epoch count, e.g. to extend a resumed run.
    pub fn set_epochs(&mut self, epochs: usize) {
        self.config.epochs = epochs;
    }

    pub fn model(&self) -> &AnyModel<T> {
        &self.model
    }

    pub fn optimizer(&self) -> &Sgd<T> {
        &self.optimizer
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn log(&self) -> &MetricLog {
        &self.log
    }

    pub fn into_model(self) -> AnyModel<T> {
        self.model
    }

    /// One pass over `train` in a freshly shuffled order, then validation and
    /// node-spread measurements. Returns the appended metric row.
    pub fn run_epoch(&mut self, train: &[VideoSample<T>], val: &[VideoSample<T>]) -> Result<MetricRow> {
        if train.is_empty() {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        check_dataset(&self.config.model, train)?;
        let epoch = self.epoch;
        let k = self.config.model.num_classes;
        let mode = self.config.model.label_mode;
        let order = epoch_order(train.len(), self.config.seed(), epoch);
        let mut loss_sum = 0.0;
        let mut correct = 0.0;
        for (b, range) in batch_ranges(train.len(), self.config.batch_size).into_iter().enumerate() {
            let idx = &order[range];
            let diverged = |loss: f64| Error::Diverged { epoch, batch: b, loss };
            let mut tape = Tape::new();
            let x = tape.constant(stack_batch(train, idx));
            let out = match self.model.forward_train(&mut tape, x) {
                Err(Error::NonFinite(_)) => return Err(diverged(f64::NAN)),
                r => r?,
            };
            let loss = match mode {
                LabelMode::Single => {
                    let targets: Vec<usize> = idx.iter().map(|&i| train[i].label.single().expect("checked")).collect();
                    tape.cross_entropy(out.logits, &targets)
                }
                LabelMode::Multi => {
                    let targets: Vec<T> = idx
                        .iter()
                        .flat_map(|&i| train[i].label.indicator(k))
                        .map(|v| T::from_f64_lossy(v as f64))
                        .collect();
                    tape.binary_cross_entropy(out.logits, &targets)
                }
            };
            let loss = match loss {
                Err(Error::NonFinite(_)) => return Err(diverged(f64::NAN)),
                r => r?,
            };
            let value = tape.value(loss).data()[0].to_f64_lossy();
            if !value.is_finite() {
                return Err(diverged(value));
            }
            loss_sum += value * idx.len() as f64;
            let logits = tape.value(out.logits).data();
            for (row, &i) in logits.chunks(k).zip(idx) {
                correct += match &train[i].label {
                    Label::Single(c) => f64::from(argmax(row) == *c),
                    Label::Multi(_) => {
                        let ind = train[i].label.indicator(k);
                        let hits = row.iter().zip(&ind).filter(|(v, &y)| (**v > T::zero()) == (y == 1)).count();
                        hits as f64 / k as f64
                    }
                };
            }
            let params = self.model.params_mut();
            params.zero_grad();
            tape.backward_into(loss, params)?;
            self.optimizer.step(params)?;
        }
        let val_metric = if val.is_empty() {
            f64::NAN
        } else {
            evaluate(&self.model, val, PerturbMode::Natural, self.config.seed())?.metric
        };
        let row = MetricRow {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_acc: correct / train.len() as f64,
            val_metric,
            mean_node_distance: node_distance(&self.model)?,
        };
        self.log.push(row)?;
        self.epoch += 1;
        Ok(row)
    }

    /// Runs epochs until `config.epochs` have completed.
    pub fn fit(&mut self, train: &[VideoSample<T>], val: &[VideoSample<T>]) -> Result<&MetricLog> {
        while self.epoch < self.config.epochs {
            self.run_epoch(train, val)?;
        }
        Ok(&self.log)
    }

    pub fn save_checkpoint(&self, dir: impl AsRef<Path>) -> Result<()> {
        save_checkpoint(dir, &self.config, self.epoch, &self.model, &self.optimizer)
    }
}

/// Trains a fresh model for `config.epochs` epochs.
pub fn train<T: Scalar>(
    config: RunConfig,
    train: &[VideoSample<T>],
    val: &[VideoSample<T>],
) -> Result<(AnyModel<T>, MetricLog)> {
    let mut trainer = Trainer::new(config, train)?;
    trainer.fit(train, val)?;
    let log = trainer.log.clone();
    Ok((trainer.into_model(), log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate_dataset, Regime};

    #[test]
    fn batches_merge_a_trailing_singleton() {
        assert_eq!(batch_ranges(17, 8), vec![0..8, 8..17]);
        assert_eq!(batch_ranges(16, 8), vec![0..8, 8..16]);
        assert_eq!(batch_ranges(1, 8), vec![0..1]);
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let items: Vec<usize> = (0..23).collect();
        let (tr, va) = split_train_val(&items, 5);
        assert_eq!(va.len(), 4);
        let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
        all.sort();
        assert_eq!(all, items);
        assert_eq!(split_train_val(&items, 5), (tr, va));
    }

    #[test]
    fn run_config_json_keys() {
        let cfg = RunConfig::desk();
        let v: serde_json::Value = serde_json::to_value(&cfg).unwrap();
        for key in ["T", "N", "H", "W", "C", "t", "n", "epochs", "batch_size", "learning_rate", "seed"] {
            assert!(v.get(key).is_some(), "missing key {key}");
        }
        let back: RunConfig = serde_json::from_value(v).unwrap();
        assert_eq!(back, cfg);
    }

    fn tiny() -> (RunConfig, Vec<VideoSample<f64>>) {
        let spec = SyntheticSpec {
            regime: Regime::DistinctActions,
            num_classes: 2,
            num_units: 4,
            train_per_class: 4,
            val_per_class: 0,
            timesteps: 16,
            height: 1,
            width: 1,
            channels: 16,
            noise_sigma: 0.3,
            mixing: 0.1,
        };
        let data = generate_dataset::<f64>(&spec, 3).unwrap();
        let mut cfg = RunConfig::desk();
        cfg.model.num_classes = 2;
        cfg.epochs = 1;
        (cfg, data.train)
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (mut cfg, train) = tiny();
        cfg.learning_rate = 0.0;
        let mut t = Trainer::new(cfg, &train).unwrap();
        let before: Vec<Vec<u64>> =
            t.model().params().iter().map(|p| p.tensor.data().iter().map(|v| v.to_bits()).collect()).collect();
        t.run_epoch(&train, &[]).unwrap();
        let after: Vec<Vec<u64>> =
            t.model().params().iter().map(|p| p.tensor.data().iter().map(|v| v.to_bits()).collect()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn label_mode_mismatch_is_rejected() {
        let (mut cfg, train) = tiny();
        cfg.model.label_mode = LabelMode::Multi;
        assert!(Trainer::new(cfg, &train).is_err());
    }

    #[test]
    fn oracle_predictor_scores_perfectly() {
        let (_, train) = tiny();
        let lookup: std::collections::HashMap<u64, usize> =
            train.iter().map(|s| (s.features.data()[0].to_bits(), s.label.single().unwrap())).collect();
        let eval = evaluate_with(
            |b: &Tensor<f64>| {
                let per = b.len() / b.shape()[0];
                Ok(Tensor::from_fn([b.shape()[0], 2], |i| f64::from(lookup[&b.data()[i[0] * per].to_bits()] == i[1])))
            },
            LabelMode::Single,
            2,
            &train,
            PerturbMode::Natural,
            0,
        )
        .unwrap();
        assert_eq!(eval.metric, 1.0);
    }
}
