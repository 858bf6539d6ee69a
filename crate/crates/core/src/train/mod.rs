//! Optimisation, evaluation metrics and the epoch loop.

mod augment;
mod csv;
pub mod metrics;
mod optim;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::model::{self, Mode, Network, NetworkConfig, Task};
use crate::params::ModelParams;
use crate::rng::{stream, substream, Stream};
use crate::tensor::{Graph, Tensor};

pub use augment::{augment, AugmentConfig};
pub use csv::{format_g9, MetricsRow, CSV_HEADER};
pub use metrics::{confusion_matrix, mean_class_accuracy, overall_accuracy, shape_iou};
pub use optim::{adam_step, step_lr, AdamConfig, AdamState};

/// Every optimisation hyperparameter of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: Task,
    pub initial_lr: f64,
    pub decay_factor: f64,
    pub decay_every_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub augment: AugmentConfig,
}

impl TrainConfig {
    /// lr 0.001 decayed by 0.7 every 20 epochs, batch 20, 150 epochs.
    pub fn standard_classification() -> Self {
        TrainConfig {
            task: Task::Classification,
            initial_lr: 0.001,
            decay_factor: 0.7,
            decay_every_epochs: 20,
            epochs: 150,
            batch_size: 20,
            adam: AdamConfig::default(),
            seed: 0,
            augment: AugmentConfig::standard(),
        }
    }

    /// lr 0.0005 halved every 20 epochs, batch 8, 120 epochs. Point dropout
    /// is off so every point keeps a distinct label.
    pub fn standard_segmentation() -> Self {
        TrainConfig {
            task: Task::Segmentation,
            initial_lr: 0.0005,
            decay_factor: 0.5,
            decay_every_epochs: 20,
            epochs: 120,
            batch_size: 8,
            augment: AugmentConfig { dropout_max_ratio: None, ..AugmentConfig::standard() },
            ..TrainConfig::standard_classification()
        }
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config("decay_factor must lie in (0, 1]".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.decay_every_epochs == 0 {
            return Err(Error::Config("batch_size, epochs and decay_every_epochs must be positive".into()));
        }
        if !(self.initial_lr >= 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::Config("initial_lr must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Learning rate used throughout `epoch` (0-based).
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    step_lr(cfg.initial_lr, cfg.decay_factor, cfg.decay_every_epochs, epoch)
}

/// Mutable optimiser state carried across epochs.
#[derive(Clone, Debug, Default)]
pub struct TrainState {
    pub adam: AdamState,
    /// Number of completed epochs.
    pub epoch: usize,
}

/// Gradient and loss of one training sample.
fn sample_gradient(
    net: &Network,
    cloud: &PointCloud,
    cfg: &TrainConfig,
    sample_key: u64,
) -> Result<(f64, BTreeMap<String, Vec<f64>>)> {
    let mut aug_rng = substream(cfg.seed, Stream::Augment, sample_key);
    let input = augment(cloud, &cfg.augment, &mut aug_rng);
    let mut drop_rng = substream(cfg.seed, Stream::Dropout, sample_key);
    let mut g = Graph::new();
    let out = net.forward(&mut g, &input, Mode::Train(&mut drop_rng))?;
    let loss = net.loss(&mut g, out.logits, &input)?;
    g.backward(loss)?;
    Ok((g.value(loss).item(), out.params.gradients(&g)))
}

/// One pass over `data`: seeded shuffle, then one Adam step per batch on the
/// mean of the per-sample gradients. Returns the mean training loss.
///
/// Samples of a batch are processed in parallel, but their gradients are
/// summed in batch order so the result does not depend on thread timing.
pub fn train_epoch(net: &mut Network, data: &Dataset, cfg: &TrainConfig, state: &mut TrainState) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::contract("cannot train on an empty dataset"));
    }
    let epoch = state.epoch;
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut substream(cfg.seed, Stream::Shuffle, epoch as u64));
    let lr = lr_at_epoch(cfg, epoch);
    let mut total_loss = 0.0;
    for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
        let results: Vec<(f64, BTreeMap<String, Vec<f64>>)> = batch
            .par_iter()
            .enumerate()
            .map(|(j, &i)| {
                let key = (epoch as u64) << 32 | (b * cfg.batch_size + j) as u64;
                sample_gradient(net, &data.samples[i], cfg, key)
            })
            .collect::<Result<_>>()?;
        let mut iter = results.into_iter();
        let (first_loss, mut sum) = iter.next().expect("non-empty batch");
        total_loss += first_loss;
        for (loss, grads) in iter {
            total_loss += loss;
            for (name, g) in grads {
                let acc = sum.get_mut(&name).expect("same parameters for every sample");
                for (a, v) in acc.iter_mut().zip(g) {
                    *a += v;
                }
            }
        }
        let inv = 1.0 / batch.len() as f64;
        for g in sum.values_mut() {
            for v in g.iter_mut() {
                *v *= inv;
            }
        }
        adam_step(net.params_mut(), &sum, &mut state.adam, lr, &cfg.adam)?;
    }
    state.epoch += 1;
    Ok(total_loss / data.len() as f64)
}

/// Mean cross-entropy of precomputed logits.
fn logits_loss(net: &Network, logits: &Tensor, cloud: &PointCloud) -> Result<f64> {
    let mut g = Graph::new();
    let l = g.constant(logits.clone());
    let loss = net.loss(&mut g, l, cloud)?;
    Ok(g.value(loss).item())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationMetrics {
    pub loss: f64,
    pub oa: f64,
    pub acc: f64,
    /// `confusion[truth][pred]`.
    pub confusion: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationMetrics {
    pub loss: f64,
    /// Mean of per-shape IoU over all shapes.
    pub instance_miou: f64,
    /// Mean shape IoU per category, `None` for categories without shapes.
    pub category_iou: Vec<(String, Option<f64>)>,
}

/// OA and ACC of `net` on `data` (evaluation mode).
pub fn evaluate_classification(net: &Network, data: &Dataset) -> Result<ClassificationMetrics> {
    if data.is_empty() {
        return Err(Error::contract("cannot evaluate on an empty dataset"));
    }
    let logits = net.logits_batch(&data.samples)?;
    let mut pred = Vec::with_capacity(data.len());
    let mut truth = Vec::with_capacity(data.len());
    let mut loss = 0.0;
    for (l, s) in logits.iter().zip(&data.samples) {
        pred.push(model::predict(l)[0]);
        truth.push(model::targets_of(Task::Classification, s)?[0]);
        loss += logits_loss(net, l, s)?;
    }
    let cm = confusion_matrix(&pred, &truth, net.config().num_classes)?;
    Ok(ClassificationMetrics {
        loss: loss / data.len() as f64,
        oa: overall_accuracy(&cm),
        acc: mean_class_accuracy(&cm),
        confusion: cm,
    })
}

/// Instance and per-category mIoU. Predictions are restricted to the part
/// labels of each shape's category.
pub fn evaluate_segmentation(net: &Network, data: &Dataset) -> Result<SegmentationMetrics> {
    if data.is_empty() {
        return Err(Error::contract("cannot evaluate on an empty dataset"));
    }
    let logits = net.logits_batch(&data.samples)?;
    let mut per_category: Vec<Vec<f64>> = vec![Vec::new(); data.class_names.len()];
    let mut all = Vec::with_capacity(data.len());
    let mut loss = 0.0;
    for (l, s) in logits.iter().zip(&data.samples) {
        let parts: Vec<usize> = data.part_set_of(s)?.iter().map(|&p| p as usize).collect();
        let pred = model::predict_among(l, &parts);
        let truth = model::targets_of(Task::Segmentation, s)?;
        let iou = shape_iou(&pred, &truth, &parts)?;
        per_category[s.cloud_label().expect("checked by part_set_of") as usize].push(iou);
        all.push(iou);
        loss += logits_loss(net, l, s)?;
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(SegmentationMetrics {
        loss: loss / data.len() as f64,
        instance_miou: mean(&all),
        category_iou: data
            .class_names
            .iter()
            .zip(&per_category)
            .map(|(n, v)| (n.clone(), (!v.is_empty()).then(|| mean(v))))
            .collect(),
    })
}

/// Test-split row for `epoch` (also used by the CLI `eval` command).
pub fn evaluate_row(net: &Network, data: &Dataset, epoch: usize, lr: f64) -> Result<MetricsRow> {
    Ok(match net.task() {
        Task::Classification => {
            let m = evaluate_classification(net, data)?;
            MetricsRow { epoch, split: "test".into(), loss: m.loss, oa: Some(m.oa), acc: Some(m.acc), miou: None, lr }
        }
        Task::Segmentation => {
            let m = evaluate_segmentation(net, data)?;
            MetricsRow {
                epoch,
                split: "test".into(),
                loss: m.loss,
                oa: None,
                acc: None,
                miou: Some(m.instance_miou),
                lr,
            }
        }
    })
}

/// Result of [`run_training`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub network: Network,
    /// Parameters at the epoch with the best test score (OA or instance mIoU).
    pub best_params: ModelParams,
    pub best_epoch: usize,
    pub best_score: f64,
    /// Test score after the last epoch.
    pub final_score: f64,
    pub rows: Vec<MetricsRow>,
}

impl TrainOutcome {
    pub fn csv(&self) -> String {
        csv::render(&self.rows)
    }
}

/// Headline score of a test row: OA for classification, mIoU otherwise.
fn score(row: &MetricsRow) -> f64 {
    row.oa.or(row.miou).unwrap_or(f64::NAN)
}

/// Initialises a network from the run seed and trains it for `cfg.epochs`,
/// evaluating on `test` after every epoch. When `out` is given, writes
/// `metrics.csv` (rewritten after each epoch), `final.clcw` and `best.clcw`.
pub fn run_training(
    net_cfg: &NetworkConfig,
    cfg: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
    out: Option<&Path>,
    mut progress: impl FnMut(&MetricsRow, &MetricsRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    net_cfg.validate()?;
    if net_cfg.task != cfg.task || train.task != cfg.task || test.task != cfg.task {
        return Err(Error::Config("network, training config and data disagree on the task".into()));
    }
    if train.num_outputs() != net_cfg.num_classes {
        return Err(Error::Config(format!(
            "data has {} classes, the network predicts {}",
            train.num_outputs(),
            net_cfg.num_classes
        )));
    }
    train.validate()?;
    test.validate()?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut net = Network::new(net_cfg.clone(), &mut stream(cfg.seed, Stream::Init))?;
    let mut state = TrainState::default();
    let mut rows = Vec::with_capacity(2 * cfg.epochs);
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut final_score = f64::NAN;
    for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(cfg, epoch);
        let loss = train_epoch(&mut net, train, cfg, &mut state)?;
        let train_row = MetricsRow { epoch, split: "train".into(), loss, oa: None, acc: None, miou: None, lr };
        let test_row = evaluate_row(&net, test, epoch, lr)?;
        final_score = score(&test_row);
        if best.as_ref().is_none_or(|(s, _, _)| final_score > *s) {
            best = Some((final_score, epoch, net.params().clone()));
        }
        progress(&train_row, &test_row);
        rows.push(train_row);
        rows.push(test_row);
        if let Some(dir) = out {
            let path = dir.join("metrics.csv");
            std::fs::write(&path, csv::render(&rows)).map_err(|e| Error::io(&path, e))?;
        }
    }
    let (best_score, best_epoch, best_params) = best.expect("at least one epoch");
    if let Some(dir) = out {
        net.save(&dir.join("final.clcw"))?;
        crate::checkpoint::save_params(&dir.join("best.clcw"), &best_params)?;
    }
    Ok(TrainOutcome { network: net, best_params, best_epoch, best_score, final_score, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_dataset, DatasetSpec};
    use crate::model::NetworkConfig;

    fn tiny_data() -> (Dataset, Dataset) {
        let spec = DatasetSpec { classes: 2, per_class_train: 2, per_class_test: 1, points: 64, ..DatasetSpec::classification() };
        make_dataset(&spec, 0).unwrap()
    }

    #[test]
    fn schedule_spot_values() {
        let c = TrainConfig::standard_classification();
        assert_eq!(lr_at_epoch(&c, 0), 0.001);
        assert!((lr_at_epoch(&c, 20) - 0.0007).abs() < 1e-15);
        let s = TrainConfig::standard_segmentation();
        assert_eq!(lr_at_epoch(&s, 0), 0.0005);
        assert!((lr_at_epoch(&s, 40) - 0.000125).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for e in 0..150 {
            let lr = lr_at_epoch(&c, e);
            assert!(lr <= prev);
            if e < 20 {
                assert_eq!(lr, 0.001);
            }
            prev = lr;
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = TrainConfig::standard_classification();
        c.decay_factor = 0.0;
        assert!(c.validate().is_err());
        let c = TrainConfig { batch_size: 0, ..TrainConfig::standard_classification() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_learning_rate_leaves_loss_unchanged() {
        let (train, _) = tiny_data();
        let one = Dataset { samples: vec![train.samples[0].clone()], ..train };
        let cfg = TrainConfig { initial_lr: 0.0, augment: AugmentConfig::none(), ..TrainConfig::standard_classification() };
        let mut ncfg = NetworkConfig::miniature(Task::Classification, 2);
        ncfg.dropout = 0.0;
        let mut net = Network::new(ncfg, &mut stream(0, Stream::Init)).unwrap();
        let before = net.params().clone();
        let mut state = TrainState::default();
        let a = train_epoch(&mut net, &one, &cfg, &mut state).unwrap();
        let b = train_epoch(&mut net, &one, &cfg, &mut state).unwrap();
        assert_eq!(a, b);
        assert_eq!(net.params(), &before);
    }

    #[test]
    fn evaluation_rejects_empty_sets() {
        let (train, _) = tiny_data();
        let empty = Dataset { samples: Vec::new(), ..train };
        let net = Network::new(NetworkConfig::miniature(Task::Classification, 2), &mut stream(0, Stream::Init)).unwrap();
        assert!(matches!(evaluate_classification(&net, &empty), Err(Error::Contract(_))));
    }
}
