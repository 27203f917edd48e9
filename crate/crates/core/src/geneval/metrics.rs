use std::collections::{HashMap, HashSet};
use std::hash::Hash;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::GenError;
use crate::backbone::{Flavor, Model, ModelConfig};
use crate::corpus::{TargetedSequence, TokenId};
use crate::mixture::batch_log_probs;
use crate::numerics::Real;
use crate::training::{run_training, Phase, TrainConfig};

fn ngrams<T: Eq + Hash>(tokens: &[T], n: usize) -> impl Iterator<Item = &[T]> {
    tokens.windows(n)
}

fn counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    for g in ngrams(tokens, n) {
        *m.entry(g).or_insert(0) += 1;
    }
    m
}

/// Unique n-grams over total n-grams, pooled across samples.
pub fn distinct_n<T: Eq + Hash>(samples: &[Vec<T>], n: usize) -> Result<f64, GenError> {
    if n == 0 {
        return Err(GenError::NoNgrams(n));
    }
    let mut unique = HashSet::new();
    let mut total = 0usize;
    for s in samples {
        for g in ngrams(s, n) {
            unique.insert(g);
            total += 1;
        }
    }
    if total == 0 {
        return Err(GenError::NoNgrams(n));
    }
    Ok(unique.len() as f64 / total as f64)
}

/// Corpus-level BLEU with clipped n-gram precisions pooled over all pairs,
/// the closest-reference-length brevity penalty, and add-one smoothing of
/// orders `n >= 2` whose matched count is zero.
pub fn corpus_bleu<T: Eq + Hash>(
    hyps: &[Vec<T>],
    refs: &[Vec<Vec<T>>],
    max_n: usize,
) -> Result<f64, GenError> {
    if hyps.len() != refs.len() {
        return Err(GenError::LengthMismatch {
            hyps: hyps.len(),
            refs: refs.len(),
        });
    }
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for (h, rs) in hyps.iter().zip(refs) {
        hyp_len += h.len();
        ref_len += rs
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| (l.abs_diff(h.len()), l))
            .unwrap_or(0);
        for n in 1..=max_n {
            let hc = counts(h, n);
            let mut max_ref: HashMap<&[T], usize> = HashMap::new();
            for r in rs {
                for (g, c) in counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            for (g, c) in hc {
                matched[n - 1] += c.min(max_ref.get(g).copied().unwrap_or(0));
                total[n - 1] += c;
            }
        }
    }
    if hyp_len == 0 || max_n == 0 || matched[0] == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..max_n {
        let (num, den) = if n >= 1 && matched[n] == 0 {
            (1.0, total[n] as f64 + 1.0)
        } else {
            (matched[n] as f64, total[n] as f64)
        };
        log_sum += (num / den).ln();
    }
    let bp = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(bp * (log_sum / max_n as f64).exp())
}

/// Mean BLEU of each sample against all other samples.
pub fn self_bleu<T: Eq + Hash + Clone + Sync>(samples: &[Vec<T>], max_n: usize) -> Result<f64, GenError> {
    if samples.len() < 2 {
        return Err(GenError::TooFewSamples(samples.len()));
    }
    let scores: Vec<f64> = (0..samples.len())
        .into_par_iter()
        .map(|i| {
            let others: Vec<Vec<T>> = samples
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, s)| s.clone())
                .collect();
            corpus_bleu(std::slice::from_ref(&samples[i]), &[others], max_n)
        })
        .collect::<Result<_, _>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

pub fn perplexity_from_log_probs(log_probs: &[f64]) -> f64 {
    let n = log_probs.len() as f64;
    (-log_probs.iter().sum::<f64>() / n).exp()
}

/// Every `log p(x_t | x_<t)` of every sequence, in corpus order.
fn pooled_log_probs<S: Real>(
    model: &Model<S>,
    sequences: &[&[TokenId]],
    window: usize,
) -> Result<Vec<f64>, GenError> {
    let chunks: Vec<Vec<Vec<S>>> = sequences
        .par_chunks(16)
        .map(|c| batch_log_probs(model, c, window))
        .collect::<Result<_, _>>()?;
    Ok(chunks
        .into_iter()
        .flatten()
        .flatten()
        .map(|x| x.as_f64())
        .collect())
}

/// `exp` of the mean next-token NLL over the corpus, EOS included. DMLM
/// models are scored with the mixture distribution.
pub fn perplexity<S: Real>(
    model: &Model<S>,
    corpus: &[TargetedSequence],
    window: usize,
) -> Result<f64, GenError> {
    if corpus.is_empty() {
        return Err(GenError::EmptyCorpus);
    }
    let ids: Vec<&[TokenId]> = corpus.iter().map(|s| s.ids.as_slice()).collect();
    Ok(perplexity_from_log_probs(&pooled_log_probs(model, &ids, window)?))
}

/// Mean per-token NLL of `samples` (each `[BOS, .., EOS]`) under `oracle`.
pub fn lm_score<S: Real>(
    oracle: &Model<S>,
    samples: &[Vec<TokenId>],
    window: usize,
) -> Result<f64, GenError> {
    if samples.is_empty() {
        return Err(GenError::EmptySamples);
    }
    let ids: Vec<&[TokenId]> = samples.iter().map(Vec::as_slice).collect();
    let lp = pooled_log_probs(oracle, &ids, window)?;
    Ok(-lp.iter().sum::<f64>() / lp.len() as f64)
}

/// Model and schedule of the fresh language model trained for the RLM score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RlmConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub min_samples: usize,
    pub seed: u64,
}

/// Trains a baseline model on `samples` and returns its mean per-token NLL on
/// `heldout`.
pub fn rlm_score(
    samples: &[Vec<TokenId>],
    heldout: &[Vec<TokenId>],
    config: &RlmConfig,
) -> Result<f64, GenError> {
    if samples.is_empty() || heldout.is_empty() {
        return Err(GenError::EmptySamples);
    }
    if samples.len() < config.min_samples {
        return Err(GenError::InsufficientSamples {
            have: samples.len(),
            need: config.min_samples,
        });
    }
    let mut model_cfg = config.model.clone();
    model_cfg.flavor = Flavor::Baseline;
    let train_cfg = TrainConfig {
        phase: Phase::Baseline,
        ..config.train.clone()
    };
    let train: Vec<TargetedSequence> = samples
        .iter()
        .map(|s| TargetedSequence::from_ids(s.clone()))
        .collect();
    let model = Model::<f32>::new(model_cfg, config.seed).map_err(crate::training::TrainError::from)?;
    let outcome = run_training(&train_cfg, &train, &[], model, None, &mut |_| {})?;
    lm_score(&outcome.model, heldout, train_cfg.window)
}
