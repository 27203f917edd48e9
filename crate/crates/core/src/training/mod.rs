//! Training objectives, the optimizer loop, and checkpoints.

mod checkpoint;
mod gradcheck;
mod losses;
mod optim;
mod trainer;

pub use checkpoint::{
    load_checkpoint, AnyCheckpoint, Checkpoint, CheckpointMeta, RngSnapshot, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use gradcheck::{gradient_check, GradientReport, GroupReport, GRADIENT_TOLERANCE};
pub use losses::{
    baseline_lm_loss, dependency_modeling_loss, evaluate_loss, loss_on_tape, mixture_lm_loss,
    BatchLoss,
};
pub use optim::{clip_global_norm, global_norm, Adam};
pub use trainer::{data_order_hash, run_training, EarlyStopping, EpochLog, StopDecision, TrainOutcome};

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::{BackboneConfig, ModelError};
use crate::mixture::{MixtureError, DEFAULT_WINDOW};
use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("phase order violation: {0}")]
    PhaseOrderViolation(String),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch} (gradient norm {grad_norm})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        loss: f64,
        grad_norm: f64,
    },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

impl From<MixtureError> for TrainError {
    fn from(e: MixtureError) -> Self {
        match e {
            MixtureError::Model(m) => TrainError::Model(m),
            MixtureError::Numerics(n) => TrainError::Numerics(n),
            other => TrainError::InvalidConfig(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Future-dependent-token objective.
    DepModeling,
    /// Next-token likelihood under the mixture distribution.
    MixtureFinetune,
    /// Next-token likelihood under the output head.
    Baseline,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::DepModeling => "dep_modeling",
            Phase::MixtureFinetune => "mixture_finetune",
            Phase::Baseline => "baseline",
        }
    }

    pub fn loss_kind(self) -> LossKind {
        match self {
            Phase::DepModeling => LossKind::Dependency,
            Phase::MixtureFinetune => LossKind::Mixture,
            Phase::Baseline => LossKind::Baseline,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dep" | "dep_modeling" => Ok(Phase::DepModeling),
            "finetune" | "mixture_finetune" => Ok(Phase::MixtureFinetune),
            "baseline" => Ok(Phase::Baseline),
            _ => Err(format!("unknown phase {s:?} (expected dep, finetune or baseline)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Dependency,
    Mixture,
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub phase: Phase,
    /// `None` picks 1e-3 for recurrent and 5e-4 for transformer backbones.
    pub lr: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Mixture context window; 0 is unbounded.
    pub window: usize,
    /// Permit mixture finetuning without a dependency-modeling start point.
    pub allow_from_scratch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            phase: Phase::DepModeling,
            lr: None,
            beta1: 0.9,
            beta2: 0.98,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            grad_clip: 0.25,
            batch_size: 16,
            max_epochs: 20,
            patience: 10,
            seed: 0,
            window: DEFAULT_WINDOW,
            allow_from_scratch: false,
        }
    }
}

impl TrainConfig {
    pub fn effective_lr(&self, backbone: &BackboneConfig) -> f64 {
        self.lr.unwrap_or(match backbone {
            BackboneConfig::Recurrent(_) => 1e-3,
            BackboneConfig::Transformer(_) => 5e-4,
        })
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if let Some(lr) = self.lr {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad("lr must be positive");
            }
        }
        if !(self.grad_clip > 0.0) {
            return bad("grad_clip must be positive");
        }
        if self.patience < 1 {
            return bad("patience must be at least 1");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) || self.weight_decay < 0.0 {
            return bad("adam_eps must be positive and weight_decay nonnegative");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
