//! Dependency attention and the attention-weighted mixture of stored
//! dependency distributions, both stepwise (decoding) and teacher-forced.

mod buffer;
mod decode;

pub use buffer::{BufferEntry, DistributionBuffer};
pub use decode::{inference_step, DecodeState, StepOutput};

use thiserror::Error;

use crate::backbone::{BackboneOutput, Bound, Model, ModelError};
use crate::corpus::TokenId;
use crate::numerics::{softmax_in_place, NumericsError, Real, Tape, Tensor, Var};

/// Floor added to probabilities before taking logs.
pub const LOG_EPS: f64 = 1e-12;

/// Default context window.
pub const DEFAULT_WINDOW: usize = 64;

#[derive(Debug, Error)]
pub enum MixtureError {
    #[error("dependency attention over an empty buffer")]
    EmptyBuffer,
    #[error("length mismatch: {weights} attention weights for {dists} distributions")]
    LengthMismatch { weights: usize, dists: usize },
    #[error("{0}")]
    Unsupported(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Convex weights over buffered positions, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRow<S>(pub Vec<S>);

impl<S: Real> AttentionRow<S> {
    pub fn weights(&self) -> &[S] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `h · W` for a row vector `h` and a `[H, H]` projection.
pub fn project<S: Real>(w: &Tensor<S>, h: &[S]) -> Vec<S> {
    let (rows, cols) = w.dims2().expect("projection is 2-D");
    debug_assert_eq!(rows, h.len());
    let data = w.data();
    let mut out = vec![S::zero(); cols];
    for (k, &x) in h.iter().enumerate() {
        let row = &data[k * cols..(k + 1) * cols];
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += x * wv;
        }
    }
    out
}

/// Scaled dot-product attention of the current query against buffered keys.
///
/// The current position's key must already be the last entry of `keys`, so
/// the row covers the current step as well as the past.
pub fn dependency_attention<S: Real>(
    wq: &Tensor<S>,
    h_current: &[S],
    keys: &[&[S]],
) -> Result<AttentionRow<S>, MixtureError> {
    if keys.is_empty() {
        return Err(MixtureError::EmptyBuffer);
    }
    let h = h_current.len();
    let q = project(wq, h_current);
    let scale = S::of(1.0 / (h as f64).sqrt());
    let mut scores: Vec<S> = keys
        .iter()
        .map(|k| q.iter().zip(k.iter()).map(|(&a, &b)| a * b).sum::<S>() * scale)
        .collect();
    softmax_in_place(&mut scores);
    Ok(AttentionRow(scores))
}

/// `p(w) = Σ_τ a_τ d_τ(w)`, computed in probability space.
pub fn mix_distributions<S: Real>(
    a: &AttentionRow<S>,
    dists: &[&[S]],
) -> Result<Vec<S>, MixtureError> {
    if a.len() != dists.len() {
        return Err(MixtureError::LengthMismatch {
            weights: a.len(),
            dists: dists.len(),
        });
    }
    let v = dists.first().map(|d| d.len()).unwrap_or(0);
    let mut out = vec![S::zero(); v];
    for (&w, d) in a.weights().iter().zip(dists) {
        if d.len() != v {
            return Err(NumericsError::ShapeMismatch {
                op: "mix_distributions",
                left: vec![v],
                right: vec![d.len()],
            }
            .into());
        }
        for (o, &p) in out.iter_mut().zip(d.iter()) {
            *o += w * p;
        }
    }
    Ok(out)
}

/// Teacher-forced attention matrix `[T, T]` of sequence `b` in a forward
/// pass: the recurrent query/key attention, or the backbone's head-averaged
/// attention restricted to the window and renormalized.
pub fn attention_matrix<S: Real>(
    model: &Model<S>,
    tape: &mut Tape<S>,
    bound: &Bound,
    out: &BackboneOutput,
    b: usize,
    window: usize,
) -> Result<Var, MixtureError> {
    match &out.attn_rows {
        Some(rows) => Ok(tape.band_renormalize(rows[b], window)?),
        None => {
            let wq = model
                .params()
                .index_of("dep_attn.wq")
                .ok_or_else(|| MixtureError::Unsupported("model has no dependency attention".into()))?;
            let wk = model
                .params()
                .index_of("dep_attn.wk")
                .ok_or_else(|| MixtureError::Unsupported("model has no dependency attention".into()))?;
            let h = out.hidden[b];
            let q = tape.matmul(h, bound.var(wq))?;
            let k = tape.matmul(h, bound.var(wk))?;
            let kt = tape.transpose(k)?;
            let scores = tape.matmul(q, kt)?;
            let scale = S::of(1.0 / (model.hidden_size() as f64).sqrt());
            let scores = tape.scale(scores, scale);
            Ok(tape.softmax_banded(scores, window)?)
        }
    }
}

/// Next-token probabilities `[T, V]` for every sequence of a forward pass.
///
/// Row `j` predicts the input token at `j + 1`. With `mix` the dependency
/// distributions are combined by the attention matrix; otherwise the output
/// head is used directly.
pub fn next_token_probs<S: Real>(
    model: &Model<S>,
    tape: &mut Tape<S>,
    bound: &Bound,
    out: &BackboneOutput,
    window: usize,
    mix: bool,
) -> Result<Vec<Var>, MixtureError> {
    let all_hidden = tape.concat_rows(&out.hidden)?;
    let dep = model.dep_probs(tape, bound, all_hidden)?;
    let mut probs = Vec::with_capacity(out.hidden.len());
    let mut offset = 0;
    for (b, &h) in out.hidden.iter().enumerate() {
        let t = tape.shape(h)[0];
        let d = tape.slice_rows(dep, offset, offset + t)?;
        offset += t;
        if mix {
            let a = attention_matrix(model, tape, bound, out, b, window)?;
            probs.push(tape.matmul(a, d)?);
        } else {
            probs.push(d);
        }
    }
    Ok(probs)
}

/// Per-position `log p(x_t | x_<t)` for `ids = [BOS, .., EOS]`, one entry per
/// token after BOS.
pub fn sequence_log_probs<S: Real>(
    model: &Model<S>,
    ids: &[TokenId],
    window: usize,
) -> Result<Vec<S>, MixtureError> {
    let mut out = batch_log_probs(model, &[ids], window)?;
    Ok(out.pop().unwrap_or_default())
}

/// [`sequence_log_probs`] for several sequences in one pass.
pub fn batch_log_probs<S: Real>(
    model: &Model<S>,
    batch: &[&[TokenId]],
    window: usize,
) -> Result<Vec<Vec<S>>, MixtureError> {
    if batch.iter().any(|s| s.len() < 2) {
        return Err(ModelError::EmptySequence.into());
    }
    let inputs: Vec<&[TokenId]> = batch.iter().map(|s| &s[..s.len() - 1]).collect();
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let out = model.forward(&mut tape, &bound, &inputs, None)?;
    let probs = next_token_probs(model, &mut tape, &bound, &out, window, model.uses_mixture())?;
    let eps = S::of(LOG_EPS);
    Ok(batch
        .iter()
        .zip(probs)
        .map(|(ids, p)| {
            let p = tape.value(p);
            (0..ids.len() - 1)
                .map(|j| (p.row(j)[ids[j + 1] as usize] + eps).ln())
                .collect()
        })
        .collect())
}

/// Teacher-forced attention rows for `inputs`: row `j` is the mixture weight
/// vector used to predict the token after `inputs[j]`, zero-padded to `T`.
pub fn attention_rows<S: Real>(
    model: &Model<S>,
    inputs: &[TokenId],
    window: usize,
) -> Result<Vec<Vec<S>>, MixtureError> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let out = model.forward(&mut tape, &bound, &[inputs], None)?;
    let a = attention_matrix(model, &mut tape, &bound, &out, 0, window)?;
    let a = tape.value(a);
    Ok((0..inputs.len()).map(|j| a.row(j).to_vec()).collect())
}
