use rand_chacha::ChaCha8Rng;

use super::{LossKind, TrainError};
use crate::backbone::{Bound, Model, ModelError};
use crate::corpus::{TargetedSequence, TokenId};
use crate::mixture::{next_token_probs, LOG_EPS};
use crate::numerics::{Real, Tape, Tensor, Var};

/// Scalar loss recorded on a tape with the number of terms it averages.
#[derive(Debug, Clone, Copy)]
pub struct BatchLoss {
    pub loss: Var,
    pub terms: usize,
}

/// Records the per-term mean negative log-likelihood of `kind` over `batch`.
///
/// Dependency loss sums over every element of every target multiset;
/// mixture and baseline losses sum over every token after BOS. A batch with
/// no terms yields a constant zero.
pub fn loss_on_tape<S: Real>(
    model: &Model<S>,
    tape: &mut Tape<S>,
    bound: &Bound,
    batch: &[&TargetedSequence],
    kind: LossKind,
    window: usize,
    dropout: Option<&mut ChaCha8Rng>,
) -> Result<BatchLoss, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    if batch.iter().any(|s| s.ids.len() < 2) {
        return Err(ModelError::EmptySequence.into());
    }
    let inputs: Vec<&[TokenId]> = batch.iter().map(|s| &s.ids[..s.ids.len() - 1]).collect();
    let out = model.forward(tape, bound, &inputs, dropout)?;

    let (probs, index) = match kind {
        LossKind::Dependency => {
            let hidden = tape.concat_rows(&out.hidden)?;
            let d = model.dep_probs(tape, bound, hidden)?;
            let mut index = Vec::new();
            let mut offset = 0;
            for s in batch {
                for (j, z) in s.targets.iter().enumerate() {
                    index.extend(z.iter().map(|&w| (offset + j, w as usize)));
                }
                offset += s.ids.len() - 1;
            }
            (d, index)
        }
        LossKind::Mixture | LossKind::Baseline => {
            let per_seq =
                next_token_probs(model, tape, bound, &out, window, kind == LossKind::Mixture)?;
            let p = tape.concat_rows(&per_seq)?;
            let mut index = Vec::new();
            let mut offset = 0;
            for s in batch {
                index.extend(
                    s.ids[1..]
                        .iter()
                        .enumerate()
                        .map(|(j, &w)| (offset + j, w as usize)),
                );
                offset += s.ids.len() - 1;
            }
            (p, index)
        }
    };

    let terms = index.len();
    if terms == 0 {
        let loss = tape.constant(Tensor::scalar(S::zero()));
        return Ok(BatchLoss { loss, terms });
    }
    let picked = tape.gather_elems(probs, &index)?;
    let floored = tape.add_scalar(picked, S::of(LOG_EPS));
    let logs = tape.log(floored);
    let total = tape.sum(logs);
    let loss = tape.scale(total, S::of(-1.0 / terms as f64));
    Ok(BatchLoss { loss, terms })
}

fn eval_batch<S: Real>(
    model: &Model<S>,
    batch: &[&TargetedSequence],
    kind: LossKind,
    window: usize,
) -> Result<(f64, usize), TrainError> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let l = loss_on_tape(model, &mut tape, &bound, batch, kind, window, None)?;
    Ok((tape.value(l.loss).item().as_f64(), l.terms))
}

/// Per-term mean loss of `kind` pooled over `sequences`, evaluated in
/// batches without dropout. Returns the mean and the number of terms.
pub fn evaluate_loss<S: Real>(
    model: &Model<S>,
    sequences: &[TargetedSequence],
    kind: LossKind,
    window: usize,
    batch_size: usize,
) -> Result<(f64, usize), TrainError> {
    if sequences.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let refs: Vec<&TargetedSequence> = sequences.iter().collect();
    let mut total = 0.0;
    let mut terms = 0;
    for chunk in refs.chunks(batch_size.max(1)) {
        let (l, n) = eval_batch(model, chunk, kind, window)?;
        total += l * n as f64;
        terms += n;
    }
    Ok((if terms == 0 { 0.0 } else { total / terms as f64 }, terms))
}

/// Dependency-modeling loss of a batch in evaluation mode.
pub fn dependency_modeling_loss<S: Real>(
    model: &Model<S>,
    batch: &[TargetedSequence],
) -> Result<f64, TrainError> {
    Ok(evaluate_loss(model, batch, LossKind::Dependency, 0, batch.len())?.0)
}

/// Mixture language-modeling loss of a batch in evaluation mode.
pub fn mixture_lm_loss<S: Real>(
    model: &Model<S>,
    batch: &[TargetedSequence],
    window: usize,
) -> Result<f64, TrainError> {
    Ok(evaluate_loss(model, batch, LossKind::Mixture, window, batch.len())?.0)
}

/// Next-token loss using the output head as the language model.
pub fn baseline_lm_loss<S: Real>(
    model: &Model<S>,
    batch: &[TargetedSequence],
) -> Result<f64, TrainError> {
    Ok(evaluate_loss(model, batch, LossKind::Baseline, 0, batch.len())?.0)
}
