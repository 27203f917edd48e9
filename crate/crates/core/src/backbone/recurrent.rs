//! Stacked LSTM with inter-layer dropout.

use rand_chacha::ChaCha8Rng;

use super::params::{uniform, xavier};
use super::{maybe_dropout, BackboneOutput, Bound, Dropout, Model, ModelError, ParamStore, RecurrentConfig};
use crate::corpus::{TokenId, PAD};
use crate::numerics::{Real, Tape, Tensor, Var};

/// `(input, output)` width of every layer. With tied embeddings the top
/// layer projects back to `embed_dim`.
pub(crate) fn layer_dims(c: &RecurrentConfig) -> Vec<(usize, usize)> {
    (0..c.num_layers)
        .map(|l| {
            let input = if l == 0 { c.embed_dim } else { c.hidden_dim };
            let output = if l + 1 == c.num_layers && c.tie_embeddings {
                c.embed_dim
            } else {
                c.hidden_dim
            };
            (input, output)
        })
        .collect()
}

pub(crate) fn init<S: Real>(c: &RecurrentConfig, params: &mut ParamStore<S>, rng: &mut ChaCha8Rng) {
    params.push("embed", uniform(&[c.vocab_size, c.embed_dim], 0.1, rng));
    for (l, (input, output)) in layer_dims(c).into_iter().enumerate() {
        params.push(format!("lstm.{l}.w_ih"), xavier(&[input, 4 * output], rng));
        params.push(format!("lstm.{l}.w_hh"), xavier(&[output, 4 * output], rng));
        params.push(format!("lstm.{l}.bias"), Tensor::zeros(&[4 * output]));
    }
}

/// Hidden and cell state of every layer for a single decoding stream.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState<S> {
    h: Vec<Tensor<S>>,
    c: Vec<Tensor<S>>,
}

impl<S: Real> RecurrentState<S> {
    pub fn zeros(c: &RecurrentConfig) -> Self {
        let dims = layer_dims(c);
        RecurrentState {
            h: dims.iter().map(|&(_, o)| Tensor::zeros(&[1, o])).collect(),
            c: dims.iter().map(|&(_, o)| Tensor::zeros(&[1, o])).collect(),
        }
    }
}

struct LayerVars {
    w_ih: Var,
    w_hh: Var,
    bias: Var,
    width: usize,
}

fn layer_vars<S: Real>(
    model: &Model<S>,
    c: &RecurrentConfig,
    bound: &Bound,
) -> Result<Vec<LayerVars>, ModelError> {
    layer_dims(c)
        .into_iter()
        .enumerate()
        .map(|(l, (_, width))| {
            Ok(LayerVars {
                w_ih: bound.var(model.param(&format!("lstm.{l}.w_ih"))?),
                w_hh: bound.var(model.param(&format!("lstm.{l}.w_hh"))?),
                bias: bound.var(model.param(&format!("lstm.{l}.bias"))?),
                width,
            })
        })
        .collect()
}

fn cell<S: Real>(
    tape: &mut Tape<S>,
    layer: &LayerVars,
    x: Var,
    h: Var,
    c: Var,
) -> Result<(Var, Var), ModelError> {
    let o = layer.width;
    let a = tape.matmul(x, layer.w_ih)?;
    let b = tape.matmul(h, layer.w_hh)?;
    let pre = tape.add(a, b)?;
    let pre = tape.add_bias(pre, layer.bias)?;
    let i = tape.slice_cols(pre, 0, o)?;
    let i = tape.sigmoid(i);
    let f = tape.slice_cols(pre, o, 2 * o)?;
    let f = tape.sigmoid(f);
    let g = tape.slice_cols(pre, 2 * o, 3 * o)?;
    let g = tape.tanh(g);
    let og = tape.slice_cols(pre, 3 * o, 4 * o)?;
    let og = tape.sigmoid(og);
    let keep = tape.mul(f, c)?;
    let write = tape.mul(i, g)?;
    let c_new = tape.add(keep, write)?;
    let squashed = tape.tanh(c_new);
    let h_new = tape.mul(og, squashed)?;
    Ok((h_new, c_new))
}

pub(crate) fn forward<S: Real>(
    model: &Model<S>,
    c: &RecurrentConfig,
    tape: &mut Tape<S>,
    bound: &Bound,
    batch: &[&[TokenId]],
    dropout: &mut Option<Dropout<'_>>,
) -> Result<BackboneOutput, ModelError> {
    let layers = layer_vars(model, c, bound)?;
    let embed = bound.var(model.param("embed")?);
    let b = batch.len();
    let steps = batch.iter().map(|s| s.len()).max().unwrap_or(0);

    let mut h: Vec<Var> = Vec::with_capacity(layers.len());
    let mut cs: Vec<Var> = Vec::with_capacity(layers.len());
    for layer in &layers {
        h.push(tape.constant(Tensor::zeros(&[b, layer.width])));
        cs.push(tape.constant(Tensor::zeros(&[b, layer.width])));
    }

    // Sequences that have ended are fed PAD; causality keeps their real
    // positions unaffected.
    let mut outputs = Vec::with_capacity(steps);
    for t in 0..steps {
        let ids: Vec<usize> = batch
            .iter()
            .map(|s| s.get(t).copied().unwrap_or(PAD) as usize)
            .collect();
        let mut x = tape.gather_rows(embed, &ids)?;
        x = maybe_dropout(dropout, tape, x)?;
        for (l, layer) in layers.iter().enumerate() {
            let (hn, cn) = cell(tape, layer, x, h[l], cs[l])?;
            h[l] = hn;
            cs[l] = cn;
            x = maybe_dropout(dropout, tape, hn)?;
        }
        outputs.push(x);
    }

    let all = tape.concat_rows(&outputs)?;
    let mut hidden = Vec::with_capacity(b);
    for (k, s) in batch.iter().enumerate() {
        let rows: Vec<usize> = (0..s.len()).map(|t| t * b + k).collect();
        hidden.push(tape.gather_rows(all, &rows)?);
    }
    Ok(BackboneOutput {
        hidden,
        attn_rows: None,
    })
}

pub(crate) fn step<S: Real>(
    model: &Model<S>,
    c: &RecurrentConfig,
    state: &mut RecurrentState<S>,
    id: TokenId,
) -> Result<Vec<S>, ModelError> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let layers = layer_vars(model, c, &bound)?;
    let embed = bound.var(model.param("embed")?);
    let mut x = tape.gather_rows(embed, &[id as usize])?;
    for (l, layer) in layers.iter().enumerate() {
        let h = tape.constant(state.h[l].clone());
        let cc = tape.constant(state.c[l].clone());
        let (hn, cn) = cell(&mut tape, layer, x, h, cc)?;
        state.h[l] = tape.value(hn).clone();
        state.c[l] = tape.value(cn).clone();
        x = hn;
    }
    Ok(tape.value(x).data().to_vec())
}
