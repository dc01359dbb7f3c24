//! Mini-batch Adam training over one or more tasks.

mod adam;
mod log;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

pub use adam::{clip_global_norm, OptimizerState, ParamMoments};
pub use log::{EpochRecord, MetricsLog};

use rand::seq::SliceRandom;

use crate::autodiff::Tape;
use crate::blocks::{ParamStore, Session, Trainable};
use crate::error::{Error, Result};
use crate::pde::{gather, ChannelStats, Dataset};
use crate::rng;
use crate::tensor::Tensor;
use crate::transfer::{evaluate, trainable_parameters, NeuralOperatorModel, Phase, TaskNormalization, TrainPhase};

/// Time source for per-epoch timing; the core crate has no clock of its own.
pub trait Clock {
    fn seconds(&self) -> f64;
}

/// Reports zero elapsed time.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn seconds(&self) -> f64 {
        0.0
    }
}

/// Multiply the learning rate by `factor` every `every` epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepDecay {
    pub every: usize,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Global gradient-norm threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr_decay: Option<StepDecay>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 16,
            epochs: 10,
            seed: 0,
            clip_norm: Some(1.0),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr_decay: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("train config: {what}")));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("betas must lie in [0, 1) and eps must be positive");
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad("clip_norm must be positive");
            }
        }
        if let Some(d) = self.lr_decay {
            if d.every == 0 || !(d.factor > 0.0) {
                return bad("lr_decay needs every >= 1 and a positive factor");
            }
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_decay {
            Some(d) => self.lr * libm::pow(d.factor, ((epoch - 1) / d.every) as f64),
            None => self.lr,
        }
    }
}

/// Training and validation splits of one task.
#[derive(Debug, Clone, Copy)]
pub struct TaskData<'a> {
    pub train: &'a Dataset,
    pub val: &'a Dataset,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: MetricsLog,
    /// Parameters at the epoch with the lowest validation NMAE.
    pub best: ParamStore,
    pub best_epoch: usize,
    pub optimizer: OptimizerState,
}

impl TrainOutcome {
    pub fn restore_best(&self, model: &mut NeuralOperatorModel) {
        model.params = self.best.clone();
    }
}

struct Prepared<'a> {
    task: &'a str,
    inputs: Tensor,
    targets: Tensor,
    val: &'a Dataset,
}

/// Fits normalization on the training split of every active task that has
/// none yet.
pub fn fit_normalization(model: &mut NeuralOperatorModel, task: &str, train: &Dataset) -> Result<()> {
    if model.normalizations().contains_key(task) {
        return Ok(());
    }
    let norm = TaskNormalization {
        input: ChannelStats::fit(&train.inputs)?,
        output: ChannelStats::fit(&train.targets)?,
    };
    model.set_normalization(task, norm)
}

/// Runs `config.epochs` epochs of `phase` on `model`.
///
/// With several tasks, each round takes one mini-batch from every task
/// that still has batches left this epoch. Only the parameters selected by
/// [`trainable_parameters`] receive gradients; in fine-tuning the core
/// fingerprint is compared after every epoch.
pub fn train(
    model: &mut NeuralOperatorModel,
    phase: &TrainPhase,
    data: &BTreeMap<String, TaskData<'_>>,
    config: &TrainConfig,
    clock: &dyn Clock,
) -> Result<TrainOutcome> {
    train_with_state(model, phase, data, config, clock, OptimizerState::new(config))
}

pub fn train_with_state(
    model: &mut NeuralOperatorModel,
    phase: &TrainPhase,
    data: &BTreeMap<String, TaskData<'_>>,
    config: &TrainConfig,
    clock: &dyn Clock,
    mut optimizer: OptimizerState,
) -> Result<TrainOutcome> {
    config.validate()?;
    let trainable: BTreeSet<String> = trainable_parameters(phase, model)?;
    let trainable_count: usize = trainable.iter().filter_map(|n| model.params.get(n)).map(Tensor::len).sum();

    let mut prepared = Vec::with_capacity(phase.tasks.len());
    for task in &phase.tasks {
        let d = data.get(task).ok_or_else(|| Error::EmptyDataset(task.clone()))?;
        if d.train.is_empty() {
            return Err(Error::EmptyDataset(format!("{task} train")));
        }
        if d.val.is_empty() {
            return Err(Error::EmptyDataset(format!("{task} validation")));
        }
        fit_normalization(model, task, d.train)?;
        let norm = model.normalization(task)?;
        prepared.push(Prepared {
            task,
            inputs: norm.input.normalize(&d.train.inputs)?,
            targets: norm.output.normalize(&d.train.targets)?,
            val: d.val,
        });
    }

    let frozen = (phase.phase == Phase::Finetune).then(|| model.core_fingerprint());
    let mut log = MetricsLog::default();
    let mut best = model.params.clone();
    let mut best_score = f64::INFINITY;
    let mut best_epoch = 0;

    for epoch in 1..=config.epochs {
        let lr = config.lr_at(epoch);
        let mut shuffle = rng::seeded(rng::derive(config.seed, epoch as u64));
        let orders: Vec<Vec<Vec<usize>>> = prepared
            .iter()
            .map(|p| {
                let mut idx: Vec<usize> = (0..p.inputs.shape()[0]).collect();
                idx.shuffle(&mut shuffle);
                idx.chunks(config.batch_size).map(<[usize]>::to_vec).collect()
            })
            .collect();
        let rounds = orders.iter().map(Vec::len).max().unwrap_or(0);

        let start = clock.seconds();
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for round in 0..rounds {
            for (p, batches) in prepared.iter().zip(&orders) {
                let Some(batch) = batches.get(round) else { continue };
                let loss = step(model, p, batch, &trainable, &mut optimizer, config, lr).map_err(|e| match e {
                    Error::NonFiniteLoss { .. } => Error::NonFiniteLoss {
                        epoch,
                        last_good: epoch.checked_sub(1).filter(|&e| e > 0),
                    },
                    other => other,
                })?;
                loss_sum += loss * batch.len() as f64;
                seen += batch.len();
            }
        }
        let seconds = clock.seconds() - start;

        if let Some(fp) = frozen {
            if model.core_fingerprint() != fp {
                return Err(Error::FrozenParameterChanged(epoch));
            }
        }

        let (mut val_mse, mut val_nmae) = (0.0, 0.0);
        for p in &prepared {
            let m = evaluate(&(&*model, p.task), p.val, config.batch_size.max(16))?;
            val_mse += m.mse;
            val_nmae += m.nmae;
        }
        let k = prepared.len() as f64;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / seen.max(1) as f64,
            val_mse: val_mse / k,
            val_nmae_percent: 100.0 * val_nmae / k,
            seconds,
            trainable_params: trainable_count,
        };
        if !(record.val_nmae_percent.is_finite()) {
            return Err(Error::NonFiniteLoss {
                epoch,
                last_good: epoch.checked_sub(1).filter(|&e| e > 0),
            });
        }
        if record.val_nmae_percent < best_score {
            best_score = record.val_nmae_percent;
            best_epoch = epoch;
            best = model.params.clone();
        }
        log.push(record);
    }
    Ok(TrainOutcome {
        log,
        best,
        best_epoch,
        optimizer,
    })
}

fn step(
    model: &mut NeuralOperatorModel,
    p: &Prepared<'_>,
    batch: &[usize],
    trainable: &BTreeSet<String>,
    optimizer: &mut OptimizerState,
    config: &TrainConfig,
    lr: f64,
) -> Result<f64> {
    let x = gather(&p.inputs, batch);
    let y = gather(&p.targets, batch);
    let mut tape = Tape::new();
    let composed = model.compose(p.task)?;
    let mut s = Session::new(&mut tape, &model.params, Trainable::Only(trainable));
    let pred = composed.forward(&mut s, &x)?;
    let bound = s.into_bindings();
    let target = tape.constant(y);
    let loss = tape.mse(pred, target)?;
    let value = tape.value(loss).data()[0];
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: 0, last_good: None });
    }
    let mut grads = tape.backward(loss)?;
    let mut named = BTreeMap::new();
    for (name, var) in bound {
        if trainable.contains(&name) {
            if let Some(g) = grads.take(var) {
                named.insert(name, g);
            }
        }
    }
    if let Some(c) = config.clip_norm {
        clip_global_norm(&mut named, c);
    }
    optimizer.step(&mut model.params, &named, lr)?;
    Ok(value)
}
