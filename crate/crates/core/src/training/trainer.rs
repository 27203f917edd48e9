use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    clip_global_norm, evaluate_loss, loss_on_tape, Adam, Phase, RngSnapshot, TrainConfig,
    TrainError,
};
use crate::backbone::{Flavor, Model};
use crate::corpus::TargetedSequence;
use crate::numerics::{Real, Tape, Tensor};

const DATA_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    NoImprovement,
    Stop,
}

/// Stops after `patience` consecutive epochs without a new best validation loss.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            bad_epochs: 0,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn observe(&mut self, val_loss: f64) -> StopDecision {
        if self.best.is_none_or(|b| val_loss < b) {
            self.best = Some(val_loss);
            self.bad_epochs = 0;
            return StopDecision::Improved;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::NoImprovement
        }
    }
}

/// One row of the JSON-lines training log. Epoch 0 evaluates the starting model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub phase: Phase,
    pub train_loss: Option<f64>,
    pub val_loss: f64,
    pub grad_norm: Option<f64>,
    pub data_order: Option<String>,
    pub best: bool,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<S> {
    /// Parameters of the epoch with the lowest validation loss.
    pub model: Model<S>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub log: Vec<EpochLog>,
    pub stopped_early: bool,
    pub rng: RngSnapshot,
}

/// Short digest of an epoch's example order.
pub fn data_order_hash(order: &[usize]) -> String {
    let mut h = Sha256::new();
    for &i in order {
        h.update((i as u64).to_le_bytes());
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn check_phase<S: Real>(
    config: &TrainConfig,
    model: &Model<S>,
    init_phase: Option<Phase>,
) -> Result<(), TrainError> {
    let violation = |m: String| Err(TrainError::PhaseOrderViolation(m));
    match (config.phase, model.flavor()) {
        (Phase::Baseline, Flavor::Baseline) => Ok(()),
        (Phase::Baseline, Flavor::Dmlm) | (_, Flavor::Baseline) => violation(format!(
            "phase {} does not apply to a {:?} model",
            config.phase,
            model.flavor()
        )),
        (Phase::DepModeling, Flavor::Dmlm) => Ok(()),
        (Phase::MixtureFinetune, Flavor::Dmlm) => match init_phase {
            Some(Phase::DepModeling | Phase::MixtureFinetune) => Ok(()),
            _ if config.allow_from_scratch => Ok(()),
            other => violation(format!(
                "mixture_finetune needs a dep_modeling checkpoint, got {}",
                other.map_or("none".to_string(), |p| p.to_string())
            )),
        },
    }
}

/// Trains `model` on `train` with the objective of `config.phase`, selecting
/// the epoch with the best loss on `val` (or on `train` when `val` is empty).
///
/// `init_phase` is the phase of the checkpoint `model` was loaded from.
pub fn run_training<S: Real>(
    config: &TrainConfig,
    train: &[TargetedSequence],
    val: &[TargetedSequence],
    model: Model<S>,
    init_phase: Option<Phase>,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome<S>, TrainError> {
    config.validate()?;
    check_phase(config, &model, init_phase)?;
    if train.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let kind = config.phase.loss_kind();
    let val_set = if val.is_empty() { train } else { val };
    let eval = |m: &Model<S>| evaluate_loss(m, val_set, kind, config.window, config.batch_size.max(32));

    let mut model = model;
    let mut data_rng = ChaCha8Rng::seed_from_u64(config.seed);
    data_rng.set_stream(DATA_STREAM);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(DROPOUT_STREAM);
    let use_dropout = model.config().backbone.dropout() > 0.0;

    let lr = config.effective_lr(&model.config().backbone);
    let mut adam = Adam::new(
        model.params(),
        lr,
        config.beta1,
        config.beta2,
        config.adam_eps,
        config.weight_decay,
    );
    let mut stopper = EarlyStopping::new(config.patience);
    let mut log = Vec::new();
    let start = Instant::now();

    let (initial, _) = eval(&model)?;
    let row = EpochLog {
        epoch: 0,
        phase: config.phase,
        train_loss: None,
        val_loss: initial,
        grad_norm: None,
        data_order: None,
        best: false,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    on_epoch(&row);
    log.push(row);

    let mut best_model = model.clone();
    let mut best_epoch = 0;
    let mut best_val = initial;
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut data_rng);
        let mut total = 0.0;
        let mut terms = 0usize;
        let mut norm_sum = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&TargetedSequence> = chunk.iter().map(|&i| &train[i]).collect();
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape, true);
            let dropout = if use_dropout { Some(&mut dropout_rng) } else { None };
            let l = loss_on_tape(&model, &mut tape, &bound, &batch, kind, config.window, dropout)?;
            let value = tape.value(l.loss).item().as_f64();
            if l.terms == 0 {
                continue;
            }
            tape.backward(l.loss)?;
            let mut grads: Vec<Tensor<S>> = bound
                .vars()
                .iter()
                .map(|&v| tape.grad(v).expect("parameters require grad"))
                .collect();
            drop(tape);
            let norm = clip_global_norm(&mut grads, config.grad_clip);
            if !value.is_finite() || !norm.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: b,
                    loss: value,
                    grad_norm: norm,
                });
            }
            adam.step(model.params_mut(), &grads);
            total += value * l.terms as f64;
            terms += l.terms;
            norm_sum += norm;
            batches += 1;
        }
        let train_loss = if terms == 0 { 0.0 } else { total / terms as f64 };
        let (val_loss, _) = eval(&model)?;
        if !val_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                epoch,
                batch: batches,
                loss: val_loss,
                grad_norm: f64::NAN,
            });
        }
        let decision = stopper.observe(val_loss);
        if decision == StopDecision::Improved {
            best_model = model.clone();
            best_epoch = epoch;
            best_val = val_loss;
        }
        let row = EpochLog {
            epoch,
            phase: config.phase,
            train_loss: Some(train_loss),
            val_loss,
            grad_norm: Some(if batches == 0 { 0.0 } else { norm_sum / batches as f64 }),
            data_order: Some(data_order_hash(&order)),
            best: decision == StopDecision::Improved,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch} {} train {train_loss:.4} val {val_loss:.4}",
            config.phase
        );
        on_epoch(&row);
        log.push(row);
        if decision == StopDecision::Stop {
            stopped_early = true;
            break;
        }
    }

    Ok(TrainOutcome {
        model: best_model,
        best_epoch,
        best_val_loss: best_val,
        log,
        stopped_early,
        rng: RngSnapshot {
            seed: config.seed,
            data_order: data_rng.get_word_pos().to_string(),
            dropout: dropout_rng.get_word_pos().to_string(),
        },
    })
}
