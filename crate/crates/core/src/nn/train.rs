//! Epoch loop with validation-AUC checkpoint selection.

use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::layers::BnMode;
use super::loss::{cross_entropy, positive_probability};
use super::net::NetParams;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::metrics::{roc_auc, ScoredSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Samples shown per epoch (40000 at full scale).
    pub epoch_size: usize,
    pub batch_size: usize,
    pub bn_momentum: f64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 100, epoch_size: 40_000, batch_size: 32, bn_momentum: 0.1, adam: AdamConfig::base_training() }
    }
}

impl TrainConfig {
    pub fn steps_per_epoch(&self) -> usize {
        self.epoch_size.div_ceil(self.batch_size.max(1))
    }

    pub fn validate(&self, prefix: &str) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config(format!("{prefix}.batch_size"), "must be >= 1"));
        }
        if self.epochs > 0 && self.epoch_size == 0 {
            return Err(Error::config(format!("{prefix}.epoch_size"), "must be >= 1"));
        }
        if self.adam.lr.is_nan() || self.adam.lr <= 0.0 || self.adam.weight_decay < 0.0 {
            return Err(Error::config(format!("{prefix}.adam"), "lr must be > 0 and weight_decay >= 0"));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::config(format!("{prefix}.bn_momentum"), "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Supplies training batches: normalized patches and class indices.
pub trait BatchSource {
    fn next_batch(&mut self, size: usize) -> Result<(Tensor, Vec<usize>)>;
}

/// Fixed labelled patches for model selection.
#[derive(Clone, Debug)]
pub struct LabelledBatch {
    pub x: Tensor,
    pub labels: Vec<usize>,
}

impl LabelledBatch {
    pub fn scored(&self, scores: Vec<f64>) -> ScoredSet {
        ScoredSet::new(scores, self.labels.iter().map(|&l| l == 1).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// `None` for epoch 0, which is the untrained starting point.
    pub mean_loss: Option<f64>,
    pub val_auc: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<M> {
    /// Checkpoint with the highest validation AUC (epoch 0 is the starting point).
    pub best: M,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    /// Model after the final epoch.
    pub last: M,
    pub history: Vec<EpochRecord>,
}

/// Generic epoch loop. `step` performs one optimizer step and returns the
/// batch loss; `validate` scores the current model.
pub fn fit<M: Clone>(
    init: M,
    cfg: &TrainConfig,
    mut step: impl FnMut(&mut M) -> Result<f64>,
    mut validate: impl FnMut(&M) -> Result<f64>,
) -> Result<TrainOutcome<M>> {
    let start_auc = validate(&init)?;
    let mut best = init.clone();
    let mut best_epoch = 0;
    let mut best_val_auc = start_auc;
    let mut model = init;
    let mut history = vec![EpochRecord { epoch: 0, mean_loss: None, val_auc: start_auc }];
    for epoch in 1..=cfg.epochs {
        let steps = cfg.steps_per_epoch();
        let mut loss_sum = 0.0;
        for _ in 0..steps {
            loss_sum += step(&mut model)?;
        }
        let val_auc = validate(&model)?;
        history.push(EpochRecord { epoch, mean_loss: Some(loss_sum / steps as f64), val_auc });
        if val_auc > best_val_auc {
            best_val_auc = val_auc;
            best_epoch = epoch;
            best = model.clone();
        }
    }
    Ok(TrainOutcome { best, best_epoch, best_val_auc, last: model, history })
}

/// Positive-class probability for every sample, evaluated in chunks.
pub fn score_in_chunks(
    x: &Tensor,
    chunk: usize,
    mut f: impl FnMut(&Tensor) -> Result<Vec<f64>>,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(x.n);
    let idx: Vec<usize> = (0..x.n).collect();
    for part in idx.chunks(chunk.max(1)) {
        out.extend(f(&x.select(part))?);
    }
    Ok(out)
}

/// Eval-mode scores of the plain classifier.
pub fn net_scores(params: &NetParams, x: &Tensor) -> Result<Vec<f64>> {
    score_in_chunks(x, 64, |b| Ok(positive_probability(&params.forward(b, BnMode::Running)?.0)))
}

pub fn net_val_auc(params: &NetParams, val: &LabelledBatch) -> Result<f64> {
    roc_auc(&val.scored(net_scores(params, &val.x)?))
}

/// One full-network Adam step on a batch; updates running statistics.
pub fn net_step(params: &mut NetParams, opt: &mut AdamState, x: &Tensor, labels: &[usize], momentum: f64) -> Result<f64> {
    let (logits, cache) = params.forward(x, BnMode::Batch)?;
    let (loss, dlogits) = cross_entropy(&logits, labels, params.config.classes);
    let grads = params.backward(&cache, &dlogits);
    params.update_running(&cache, momentum);
    opt.step(params, &grads, |_| true);
    Ok(loss)
}

/// Parameters together with the optimizer state that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct Trained {
    pub params: NetParams,
    pub optimizer: AdamState,
}

/// Train every parameter from `init`; returns the best-validation checkpoint.
pub fn train_classifier(
    init: NetParams,
    source: &mut impl BatchSource,
    val: &LabelledBatch,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<Trained>> {
    cfg.validate("train")?;
    let start = Trained { params: init, optimizer: AdamState::new(cfg.adam) };
    fit(
        start,
        cfg,
        |t| {
            let (x, y) = source.next_batch(cfg.batch_size)?;
            net_step(&mut t.params, &mut t.optimizer, &x, &y, cfg.bn_momentum)
        },
        |t| net_val_auc(&t.params, val),
    )
}
