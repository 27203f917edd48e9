use crate::backbone::{BackboneConfig, Model, RecurrentState};
use crate::corpus::TokenId;
use crate::numerics::{band_start, renormalize_into, Real, Tape};

use super::{
    dependency_attention, mix_distributions, project, AttentionRow, DistributionBuffer,
    MixtureError,
};

/// Incremental decoding state for one stream.
#[derive(Debug, Clone)]
pub struct DecodeState<S> {
    recurrent: Option<RecurrentState<S>>,
    prefix: Vec<TokenId>,
    buffer: DistributionBuffer<S>,
    window: usize,
}

impl<S: Real> DecodeState<S> {
    pub fn new(model: &Model<S>, window: usize) -> Self {
        DecodeState {
            recurrent: model.initial_recurrent_state(),
            prefix: Vec::new(),
            buffer: DistributionBuffer::new(window),
            window,
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Tokens consumed so far.
    pub fn prefix(&self) -> &[TokenId] {
        &self.prefix
    }

    pub fn buffer(&self) -> &DistributionBuffer<S> {
        &self.buffer
    }
}

/// Result of consuming one token.
#[derive(Debug, Clone)]
pub struct StepOutput<S> {
    /// Distribution over the next token.
    pub probs: Vec<S>,
    /// Mixture weights over the buffered positions, oldest first.
    pub attention: Option<AttentionRow<S>>,
}

/// Consumes `id` and returns the distribution over the token that follows.
pub fn inference_step<S: Real>(
    model: &Model<S>,
    state: &mut DecodeState<S>,
    id: TokenId,
) -> Result<StepOutput<S>, MixtureError> {
    state.prefix.push(id);
    match &model.config().backbone {
        BackboneConfig::Recurrent(_) => {
            let rs = state
                .recurrent
                .as_mut()
                .expect("recurrent state for a recurrent model");
            let h = model.recurrent_step(rs, id)?;
            let d = model.dep_distribution(&h)?;
            let Some((wq, wk)) = model.query_key() else {
                return Ok(StepOutput {
                    probs: d,
                    attention: None,
                });
            };
            state.buffer.push(project(wk, &h), d);
            let a = dependency_attention(wq, &h, &state.buffer.keys())?;
            let probs = mix_distributions(&a, &state.buffer.dists())?;
            Ok(StepOutput {
                probs,
                attention: Some(a),
            })
        }
        BackboneConfig::Transformer(_) => {
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape, false);
            let out = model.forward(&mut tape, &bound, &[&state.prefix], None)?;
            let t = state.prefix.len();
            let h = tape.value(out.hidden[0]).row(t - 1).to_vec();
            let d = model.dep_distribution(&h)?;
            if !model.uses_mixture() {
                return Ok(StepOutput {
                    probs: d,
                    attention: None,
                });
            }
            state.buffer.push(h, d);
            let rows = out.attn_rows.expect("transformer attention");
            let row = tape.value(rows[0]).row(t - 1);
            let band = &row[band_start(t - 1, state.window)..t];
            let mut weights = vec![S::zero(); band.len()];
            renormalize_into(band, &mut weights);
            let a = AttentionRow(weights);
            let probs = mix_distributions(&a, &state.buffer.dists())?;
            Ok(StepOutput {
                probs,
                attention: Some(a),
            })
        }
    }
}
