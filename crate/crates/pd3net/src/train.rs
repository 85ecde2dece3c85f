//! Two-stage training: an adaptive (Adam) phase followed by an SGD-with-
//! momentum phase on the same parameters, with per-epoch validation and
//! early stopping on the best validation loss.

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::loss::{likelihood_loss, LossWeights};
use crate::model::NetworkGraph;
use crate::optim::Optimizer;
use crate::rng::Rng;
use crate::tensor::{Shape, Tensor};

/// One training example: normalized depth image and its encoded label map,
/// both `(1, 1, h, w)`.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Tensor,
    pub target: Tensor,
}

/// Training schedule and bookkeeping knobs.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub stage1_epochs: usize,
    pub stage1_lr: f64,
    pub stage2_epochs: usize,
    pub stage2_lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Epochs without validation improvement tolerated before stopping.
    pub patience: usize,
    /// Fraction of the dataset held out for validation.
    pub val_split: f64,
    pub seed: u64,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage1_epochs: 30,
            stage1_lr: 0.001,
            stage2_epochs: 20,
            stage2_lr: 1e-5,
            momentum: 0.9,
            batch_size: 4,
            patience: 5,
            val_split: 0.33,
            seed: 0,
            weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stage1_epochs + self.stage2_epochs == 0 {
            return Err(Error::Param("at least one epoch is required".into()));
        }
        if !(0.0 < self.val_split && self.val_split < 1.0) {
            return Err(Error::Param(format!(
                "validation split must lie in (0, 1), got {}",
                self.val_split
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Param("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// 1 = adaptive phase, 2 = momentum phase.
    pub stage: u32,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

/// Result of a training run: the best checkpoint by validation loss, the
/// validation loss of the untrained network, and the per-epoch log.
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub initial_val_loss: f64,
    pub log: Vec<EpochLog>,
}

/// Split a dataset count into train/validation sizes; the validation share is
/// rounded to the nearest frame (e.g. 200 at 0.33 gives 134 + 66).
pub fn split_counts(total: usize, val_split: f64) -> (usize, usize) {
    let val = ((total as f64 * val_split).round() as usize).min(total);
    (total - val, val)
}

/// Early-stopping tracker over validation losses.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    best: f64,
    since_best: usize,
    patience: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> EarlyStopping {
        EarlyStopping { best: f64::INFINITY, since_best: 0, patience }
    }

    /// Record an epoch's validation loss; returns true when training should
    /// stop (more than `patience` consecutive epochs without improvement).
    pub fn observe(&mut self, val_loss: f64) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.since_best = 0;
            false
        } else {
            self.since_best += 1;
            self.since_best > self.patience
        }
    }

    /// Whether the last observed epoch set a new best.
    pub fn improved(&self) -> bool {
        self.since_best == 0 && self.best.is_finite()
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

/// Run the full two-stage schedule on `net`.
pub fn train(net: &mut NetworkGraph, dataset: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Validation("empty training dataset".into()));
    }
    let (n_train, n_val) = split_counts(dataset.len(), cfg.val_split);
    if n_train == 0 || n_val == 0 {
        return Err(Error::Validation(format!(
            "split {} / {} leaves an empty subset",
            n_train, n_val
        )));
    }
    let (train_set, val_set) = dataset.split_at(n_train);
    let stages = [
        (1u32, Optimizer::adam(cfg.stage1_lr), cfg.stage1_epochs),
        (2u32, Optimizer::sgd_momentum(cfg.stage2_lr, cfg.momentum), cfg.stage2_epochs),
    ];
    run_stages(net, train_set, val_set, cfg, stages.into_iter())
}

/// Momentum-phase-only training from an existing checkpoint, for adapting a
/// pre-trained network to a new data distribution.
pub fn fine_tune(
    checkpoint: &Checkpoint,
    dataset: &[Sample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Validation("empty fine-tuning dataset".into()));
    }
    let mut net = NetworkGraph::build(checkpoint.height, checkpoint.width, checkpoint.scale, &mut Rng::new(0))?;
    net.restore(checkpoint)?;
    if cfg.stage2_epochs == 0 {
        return Ok(TrainOutcome {
            best: checkpoint.clone(),
            initial_val_loss: f64::NAN,
            log: Vec::new(),
        });
    }
    let (n_train, n_val) = split_counts(dataset.len(), cfg.val_split);
    if n_train == 0 || n_val == 0 {
        return Err(Error::Validation("fine-tuning split leaves an empty subset".into()));
    }
    let (train_set, val_set) = dataset.split_at(n_train);
    let stages = [(2u32, Optimizer::sgd_momentum(cfg.stage2_lr, cfg.momentum), cfg.stage2_epochs)];
    run_stages(&mut net, train_set, val_set, cfg, stages.into_iter())
}

fn run_stages(
    net: &mut NetworkGraph,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
    stages: impl Iterator<Item = (u32, Optimizer, usize)>,
) -> Result<TrainOutcome> {
    let mut rng = Rng::new(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let initial_val_loss = validation_loss(net, val_set, cfg)?;
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best: Option<Checkpoint> = None;
    let mut log = Vec::new();
    let mut epoch = 0usize;

    'stages: for (stage, mut optimizer, stage_epochs) in stages {
        for _ in 0..stage_epochs {
            epoch += 1;
            rng.shuffle(&mut order);
            let mut train_loss_sum = 0.0;
            let mut batches = 0usize;
            for chunk in order.chunks(cfg.batch_size) {
                let (images, targets) = stack(train_set, chunk);
                let exec = net.forward_train(&images)?;
                let regs = net.regs();
                let loss = likelihood_loss(
                    exec.output(regs.map),
                    exec.output(regs.polished),
                    &targets,
                    &cfg.weights,
                )?;
                train_loss_sum += loss.total;
                batches += 1;
                net.backward(exec, loss.grad_map, loss.grad_polished)?;
                optimizer.step(&mut net.params)?;
            }
            let train_loss = train_loss_sum / batches.max(1) as f64;
            let val_loss = validation_loss(net, val_set, cfg)?;
            log.push(EpochLog {
                epoch,
                stage,
                train_loss,
                val_loss,
                lr: optimizer.learning_rate(),
            });
            log::info!(
                "epoch {epoch} stage {stage}: train {train_loss:.6} val {val_loss:.6}"
            );
            let stop = stopper.observe(val_loss);
            if stopper.improved() {
                net.meta.epoch = epoch as u32;
                net.meta.stage = stage;
                net.meta.best_val_loss = val_loss;
                best = Some(Checkpoint::from_network(net));
            }
            if stop {
                break 'stages;
            }
        }
    }

    let best = best.ok_or_else(|| Error::State("no epoch produced a checkpoint".into()))?;
    Ok(TrainOutcome { best, initial_val_loss, log })
}

fn validation_loss(net: &NetworkGraph, val_set: &[Sample], cfg: &TrainConfig) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    let all: Vec<usize> = (0..val_set.len()).collect();
    for chunk in all.chunks(cfg.batch_size) {
        let (images, targets) = stack(val_set, chunk);
        let (map, polished) = net.infer(&images)?;
        let loss = likelihood_loss(&map, &polished, &targets, &cfg.weights)?;
        sum += loss.total * chunk.len() as f64;
        count += chunk.len();
    }
    Ok(sum / count.max(1) as f64)
}

fn stack(samples: &[Sample], indices: &[usize]) -> (Tensor, Tensor) {
    let s = samples[indices[0]].image.shape();
    let shape = Shape::new(indices.len(), s.channels, s.height, s.width);
    let mut images = Tensor::zeros(shape);
    let mut targets = Tensor::zeros(shape);
    let frame = s.channels * s.height * s.width;
    for (slot, &idx) in indices.iter().enumerate() {
        images.data_mut()[slot * frame..(slot + 1) * frame]
            .copy_from_slice(samples[idx].image.data());
        targets.data_mut()[slot * frame..(slot + 1) * frame]
            .copy_from_slice(samples[idx].target.data());
    }
    (images, targets)
}
