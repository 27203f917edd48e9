//! Nucleus-sampling generation and automatic evaluation metrics.

mod metrics;
mod sampling;

pub use metrics::{
    corpus_bleu, distinct_n, lm_score, perplexity, perplexity_from_log_probs, rlm_score,
    self_bleu, RlmConfig,
};
pub use sampling::{generate, generate_many, nucleus_sample, nucleus_set, sample_rng};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mixture::MixtureError;
use crate::training::TrainError;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("nucleus mass p must lie in (0, 1], got {0}")]
    InvalidP(f64),
    #[error("distribution has no positive mass")]
    DegenerateDistribution,
    #[error("max_len must be at least 1")]
    InvalidMaxLen,
    #[error("no sample has at least {0} tokens")]
    NoNgrams(usize),
    #[error("{hyps} hypotheses but {refs} reference sets")]
    LengthMismatch { hyps: usize, refs: usize },
    #[error("self-BLEU needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("no samples to score")]
    EmptySamples,
    #[error("{have} samples given, at least {need} required")]
    InsufficientSamples { have: usize, need: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error(transparent)]
    Mixture(#[from] MixtureError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSettings {
    pub p: f64,
    pub max_len: usize,
    pub seed: u64,
    pub window: usize,
    pub prompt: Option<String>,
}

/// Samples, the settings that produced them, and metric values keyed by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub samples: Vec<String>,
    pub settings: Option<GenerationSettings>,
    pub metrics: BTreeMap<String, f64>,
}

#[cfg(test)]
mod tests;
