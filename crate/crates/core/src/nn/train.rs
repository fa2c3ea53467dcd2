//! Mini-batch training loop and evaluation.
//!
//! Epochs are numbered from 0. The learning rate of epoch `e` is
//! `initial_lr * factor^(number of decay epochs <= e)`, so a decay epoch of
//! 25 leaves epochs 0..=24 at the initial rate.
//!
//! All randomness of a run comes from `Rng::substream(seed, DATA_STREAM)`,
//! consumed in this order per epoch: one permutation (when shuffling), then
//! one augmentation draw per sample in visiting order.

use serde::{Deserialize, Serialize};

use crate::datasets::{apply_augment, AugmentParams, LabeledDataset, Targets};
use crate::error::{Error, Result};
use crate::nn::loss::{loss_mse, loss_softmax_ce};
use crate::nn::model::{Model, Task};
use crate::nn::optim::{Optimizer, OptimizerKind};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Substream index used for model initialization by the experiment runner.
pub const INIT_STREAM: u64 = 0;
/// Substream index used for shuffling and augmentation.
pub const DATA_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    #[serde(default)]
    pub lr_decay_epochs: Vec<usize>,
    #[serde(default = "default_decay_factor")]
    pub lr_decay_factor: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub shuffle: bool,
    #[serde(default)]
    pub augmentation: bool,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub weight_decay: f64,
}

fn default_decay_factor() -> f64 {
    0.1
}
fn default_true() -> bool {
    true
}
fn default_optimizer() -> OptimizerKind {
    OptimizerKind::adam()
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1,
            batch_size: 32,
            initial_lr: 1e-3,
            lr_decay_epochs: Vec::new(),
            lr_decay_factor: default_decay_factor(),
            seed: 0,
            shuffle: true,
            augmentation: false,
            optimizer: default_optimizer(),
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.initial_lr >= 0.0) || !self.initial_lr.is_finite() {
            return Err(Error::Config(format!("initial_lr {} must be >= 0", self.initial_lr)));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::Config(format!(
                "lr_decay_factor {} must lie in (0, 1]",
                self.lr_decay_factor
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        self.optimizer.validate()
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let n = self.lr_decay_epochs.iter().filter(|&&d| d <= epoch).count();
        self.initial_lr * self.lr_decay_factor.powi(n as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Validation MSE (regression) or accuracy in `[0, 1]` (classification).
    pub val_metric: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub optimizer_steps: u64,
}

impl TrainHistory {
    pub fn final_metric(&self) -> Option<f64> {
        self.records.last().map(|r| r.val_metric)
    }
}

fn check_compatible(model: &Model, ds: &LabeledDataset) -> Result<()> {
    let spec = model.spec();
    if ds.image_shape() != spec.input_shape {
        return Err(Error::Data(format!(
            "dataset images {:?} do not match model input {:?}",
            ds.image_shape(),
            spec.input_shape
        )));
    }
    match (spec.task, ds.targets()) {
        (Task::FftRegression, Targets::Vectors(t)) if t.shape()[1] == spec.num_outputs => Ok(()),
        (Task::Classification, Targets::Labels { num_classes, .. }) if *num_classes == spec.num_outputs => {
            Ok(())
        }
        _ => Err(Error::Data(format!(
            "dataset targets do not fit a {:?} model with {} outputs",
            spec.task, spec.num_outputs
        ))),
    }
}

fn gather(ds: &LabeledDataset, idx: &[usize], aug: Option<&[AugmentParams]>) -> Result<Tensor> {
    let mut items = Vec::with_capacity(idx.len());
    for (j, &i) in idx.iter().enumerate() {
        let x = ds.image(i)?;
        items.push(match aug {
            Some(a) => apply_augment(&x, a[j])?,
            None => x,
        });
    }
    Tensor::stack(&items)
}

/// Loss and output gradient of a batch.
fn batch_loss(model: &Model, ds: &LabeledDataset, idx: &[usize], out: &Tensor) -> Result<(f64, Tensor)> {
    match ds.targets() {
        Targets::Vectors(t) => {
            let n = model.spec().num_outputs;
            let mut rows = Vec::with_capacity(idx.len() * n);
            for &i in idx {
                rows.extend_from_slice(&t.data()[i * n..(i + 1) * n]);
            }
            loss_mse(out, &Tensor::from_vec(&[idx.len(), n], rows)?)
        }
        Targets::Labels { labels, .. } => {
            let l: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            loss_softmax_ce(out, &l)
        }
    }
}

/// Runs `cfg.epochs` epochs, updating `model` in place.
pub fn train(
    model: &mut Model,
    train_ds: &LabeledDataset,
    val_ds: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if train_ds.is_empty() || val_ds.is_empty() {
        return Err(Error::Data("training and validation sets must be non-empty".into()));
    }
    check_compatible(model, train_ds)?;
    check_compatible(model, val_ds)?;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.weight_decay, &model.params())?;
    let decay = model.weight_mask();
    let mut rng = Rng::substream(cfg.seed, DATA_STREAM);
    let n = train_ds.len();
    let mut history = TrainHistory::default();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let order = if cfg.shuffle {
            rng.permutation(n)
        } else {
            (0..n).collect()
        };
        let mut loss_sum = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let aug: Option<Vec<AugmentParams>> = cfg
                .augmentation
                .then(|| idx.iter().map(|_| AugmentParams::draw(&mut rng)).collect());
            let batch = gather(train_ds, idx, aug.as_deref())?;
            let (out, cache) = model.forward(&batch)?;
            let (loss, dout) = batch_loss(model, train_ds, idx, &out)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite training loss {loss} in epoch {epoch}"
                )));
            }
            loss_sum += loss * idx.len() as f64;
            let (grads, _) = model.backward(&cache, &dout, true, false)?;
            let grads = grads.expect("requested");
            opt.step(&mut model.params_mut(), &grads.0, &decay, lr)?;
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n as f64,
            val_metric: evaluate(model, val_ds, cfg.batch_size)?,
            lr,
        };
        log::info!(
            "epoch {epoch}: train_loss {:.6e} val_metric {:.6e} lr {lr:e}",
            record.train_loss,
            record.val_metric
        );
        history.records.push(record);
    }
    history.optimizer_steps = opt.step_count();
    Ok(history)
}

/// Mean squared error (regression) or accuracy (classification).
pub fn evaluate(model: &Model, ds: &LabeledDataset, batch_size: usize) -> Result<f64> {
    check_compatible(model, ds)?;
    let all: Vec<usize> = (0..ds.len()).collect();
    let mut acc = 0.0;
    for idx in all.chunks(batch_size.max(1)) {
        let out = model.predict(&gather(ds, idx, None)?)?;
        match ds.targets() {
            Targets::Vectors(_) => {
                let (loss, _) = batch_loss(model, ds, idx, &out)?;
                acc += loss * idx.len() as f64;
            }
            Targets::Labels { labels, .. } => {
                let k = model.spec().num_outputs;
                for (row, &i) in out.data().chunks_exact(k).zip(idx) {
                    if argmax(row) == labels[i] {
                        acc += 1.0;
                    }
                }
            }
        }
    }
    let metric = acc / ds.len() as f64;
    if !metric.is_finite() {
        return Err(Error::Numeric(format!("non-finite validation metric {metric}")));
    }
    Ok(metric)
}

/// Index of the largest entry, first one on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
