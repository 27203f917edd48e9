//! Pre-norm causal transformer decoder with learned absolute positions.

use rand_chacha::ChaCha8Rng;

use super::params::{uniform, xavier};
use super::{maybe_dropout, BackboneOutput, Bound, Dropout, Model, ModelError, ParamStore, TransformerConfig};
use crate::corpus::TokenId;
use crate::numerics::{Real, Tape, Tensor, Var};

const LN_EPS: f64 = 1e-5;

pub(crate) fn init<S: Real>(c: &TransformerConfig, params: &mut ParamStore<S>, rng: &mut ChaCha8Rng) {
    let d = c.model_dim;
    params.push("embed", uniform(&[c.vocab_size, d], 0.1, rng));
    params.push("pos_embed", uniform(&[c.max_positions, d], 0.1, rng));
    for l in 0..c.num_layers {
        let p = |s: &str| format!("layer.{l}.{s}");
        params.push(p("ln1.gain"), Tensor::filled(&[d], S::one()));
        params.push(p("ln1.bias"), Tensor::zeros(&[d]));
        for w in ["q", "k", "v", "o"] {
            params.push(p(&format!("attn.w{w}")), xavier(&[d, d], rng));
            params.push(p(&format!("attn.b{w}")), Tensor::zeros(&[d]));
        }
        params.push(p("ln2.gain"), Tensor::filled(&[d], S::one()));
        params.push(p("ln2.bias"), Tensor::zeros(&[d]));
        params.push(p("ffn.w1"), xavier(&[d, c.ffn_dim], rng));
        params.push(p("ffn.b1"), Tensor::zeros(&[c.ffn_dim]));
        params.push(p("ffn.w2"), xavier(&[c.ffn_dim, d], rng));
        params.push(p("ffn.b2"), Tensor::zeros(&[d]));
    }
    params.push("ln_f.gain", Tensor::filled(&[d], S::one()));
    params.push("ln_f.bias", Tensor::zeros(&[d]));
}

struct Names<'a, S> {
    model: &'a Model<S>,
    bound: &'a Bound,
}

impl<S: Real> Names<'_, S> {
    fn get(&self, name: &str) -> Result<Var, ModelError> {
        Ok(self.bound.var(self.model.param(name)?))
    }
}

fn affine<S: Real>(
    tape: &mut Tape<S>,
    x: Var,
    w: Var,
    b: Var,
) -> Result<Var, ModelError> {
    let y = tape.matmul(x, w)?;
    Ok(tape.add_bias(y, b)?)
}

pub(crate) fn forward<S: Real>(
    model: &Model<S>,
    c: &TransformerConfig,
    tape: &mut Tape<S>,
    bound: &Bound,
    batch: &[&[TokenId]],
    dropout: &mut Option<Dropout<'_>>,
) -> Result<BackboneOutput, ModelError> {
    let names = Names { model, bound };
    let mut hidden = Vec::with_capacity(batch.len());
    let mut attn = Vec::with_capacity(batch.len());
    for ids in batch {
        let (h, a) = encode(&names, c, tape, ids, dropout)?;
        hidden.push(h);
        attn.push(a);
    }
    Ok(BackboneOutput {
        hidden,
        attn_rows: Some(attn),
    })
}

fn encode<S: Real>(
    names: &Names<'_, S>,
    c: &TransformerConfig,
    tape: &mut Tape<S>,
    ids: &[TokenId],
    dropout: &mut Option<Dropout<'_>>,
) -> Result<(Var, Var), ModelError> {
    let t = ids.len();
    if t > c.max_positions {
        return Err(ModelError::SequenceTooLong {
            len: t,
            max: c.max_positions,
        });
    }
    let d = c.model_dim;
    let heads = c.num_heads;
    let hd = d / heads;
    let inv_sqrt = S::of(1.0 / (hd as f64).sqrt());
    let source = c.source_layer() - 1;

    let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
    let positions: Vec<usize> = (0..t).collect();
    let tok = tape.gather_rows(names.get("embed")?, &idx)?;
    let pos = tape.gather_rows(names.get("pos_embed")?, &positions)?;
    let mut x = tape.add(tok, pos)?;
    x = maybe_dropout(dropout, tape, x)?;

    let mut attn_rows = None;
    for l in 0..c.num_layers {
        let p = |s: &str| format!("layer.{l}.{s}");
        let h = tape.layer_norm(x, names.get(&p("ln1.gain"))?, names.get(&p("ln1.bias"))?, LN_EPS)?;
        let q = affine(tape, h, names.get(&p("attn.wq"))?, names.get(&p("attn.bq"))?)?;
        let k = affine(tape, h, names.get(&p("attn.wk"))?, names.get(&p("attn.bk"))?)?;
        let v = affine(tape, h, names.get(&p("attn.wv"))?, names.get(&p("attn.bv"))?)?;

        let mut outs = Vec::with_capacity(heads);
        let mut prob_sum: Option<Var> = None;
        for head in 0..heads {
            let (lo, hi) = (head * hd, (head + 1) * hd);
            let qh = tape.slice_cols(q, lo, hi)?;
            let kh = tape.slice_cols(k, lo, hi)?;
            let vh = tape.slice_cols(v, lo, hi)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, inv_sqrt);
            let probs = tape.softmax_banded(scores, 0)?;
            if l == source {
                prob_sum = Some(match prob_sum {
                    Some(acc) => tape.add(acc, probs)?,
                    None => probs,
                });
            }
            outs.push(tape.matmul(probs, vh)?);
        }
        if let Some(sum) = prob_sum {
            attn_rows = Some(tape.scale(sum, S::of(1.0 / heads as f64)));
        }
        let o = tape.concat_cols(&outs)?;
        let o = affine(tape, o, names.get(&p("attn.wo"))?, names.get(&p("attn.bo"))?)?;
        let o = maybe_dropout(dropout, tape, o)?;
        x = tape.add(x, o)?;

        let h2 = tape.layer_norm(x, names.get(&p("ln2.gain"))?, names.get(&p("ln2.bias"))?, LN_EPS)?;
        let f = affine(tape, h2, names.get(&p("ffn.w1"))?, names.get(&p("ffn.b1"))?)?;
        let f = tape.gelu(f);
        let f = affine(tape, f, names.get(&p("ffn.w2"))?, names.get(&p("ffn.b2"))?)?;
        let f = maybe_dropout(dropout, tape, f)?;
        x = tape.add(x, f)?;
    }
    let out = tape.layer_norm(x, names.get("ln_f.gain")?, names.get("ln_f.bias")?, LN_EPS)?;
    Ok((out, attn_rows.expect("source layer validated")))
}
