//! Recurrent and transformer language-model backbones with a shared
//! dependency/LM output head.

mod params;
mod recurrent;
mod transformer;

pub use params::ParamStore;
pub use recurrent::RecurrentState;

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TokenId;
use crate::numerics::{softmax_in_place, NumericsError, Real, Tape, Tensor, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    IdOutOfRange { id: TokenId, vocab: usize },
    #[error("sequence of length {len} exceeds the positional table ({max})")]
    SequenceTooLong { len: usize, max: usize },
    #[error("empty input sequence")]
    EmptySequence,
    #[error("missing parameter {0}")]
    MissingParameter(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecurrentConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub dropout: f64,
    /// Share the output projection with the embedding table. The top LSTM
    /// layer then emits `embed_dim` units.
    pub tie_embeddings: bool,
}

impl Default for RecurrentConfig {
    fn default() -> Self {
        RecurrentConfig {
            vocab_size: 0,
            embed_dim: 128,
            hidden_dim: 128,
            num_layers: 2,
            dropout: 0.2,
            tie_embeddings: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransformerConfig {
    pub vocab_size: usize,
    pub model_dim: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    /// 1-based layer whose head-averaged attention feeds the mixture;
    /// `None` selects the penultimate layer.
    pub attention_source_layer: Option<usize>,
    pub max_positions: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig {
            vocab_size: 0,
            model_dim: 128,
            num_heads: 4,
            num_layers: 2,
            ffn_dim: 512,
            dropout: 0.1,
            attention_source_layer: None,
            max_positions: 128,
        }
    }
}

impl TransformerConfig {
    pub fn source_layer(&self) -> usize {
        self.attention_source_layer
            .unwrap_or_else(|| self.num_layers.saturating_sub(1).max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackboneConfig {
    Recurrent(RecurrentConfig),
    Transformer(TransformerConfig),
}

impl BackboneConfig {
    pub fn vocab_size(&self) -> usize {
        match self {
            BackboneConfig::Recurrent(c) => c.vocab_size,
            BackboneConfig::Transformer(c) => c.vocab_size,
        }
    }

    pub fn dropout(&self) -> f64 {
        match self {
            BackboneConfig::Recurrent(c) => c.dropout,
            BackboneConfig::Transformer(c) => c.dropout,
        }
    }

    pub fn set_dropout(&mut self, p: f64) {
        match self {
            BackboneConfig::Recurrent(c) => c.dropout = p,
            BackboneConfig::Transformer(c) => c.dropout = p,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            BackboneConfig::Recurrent(_) => "recurrent",
            BackboneConfig::Transformer(_) => "transformer",
        }
    }
}

/// Whether next-token probabilities come straight from the output head or
/// from the attention-weighted mixture of stored dependency distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flavor {
    Baseline,
    Dmlm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub flavor: Flavor,
}

/// Per-sequence outputs of a teacher-forced forward pass.
#[derive(Debug, Clone)]
pub struct BackboneOutput {
    /// `[T, H]` per sequence; row `j` summarizes inputs `0..=j`.
    pub hidden: Vec<Var>,
    /// `[T, T]` head-averaged attention of the source layer (transformer only).
    pub attn_rows: Option<Vec<Var>>,
}

/// Model parameters bound as tape leaves, indexed like the [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, index: usize) -> Var {
        self.vars[index]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Inverted-dropout masks drawn from a dedicated RNG.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

impl Dropout<'_> {
    pub(crate) fn apply<S: Real>(
        &mut self,
        tape: &mut Tape<S>,
        x: Var,
    ) -> Result<Var, NumericsError> {
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let shape = tape.shape(x).to_vec();
        let n: usize = shape.iter().product();
        let keep = S::of(1.0 / (1.0 - self.rate));
        let mask: Vec<S> = (0..n)
            .map(|_| {
                if self.rng.gen::<f64>() < self.rate {
                    S::zero()
                } else {
                    keep
                }
            })
            .collect();
        let m = tape.constant(Tensor::new(shape, mask)?);
        tape.mul(x, m)
    }
}

pub(crate) fn maybe_dropout<S: Real>(
    dropout: &mut Option<Dropout<'_>>,
    tape: &mut Tape<S>,
    x: Var,
) -> Result<Var, NumericsError> {
    match dropout {
        Some(d) => d.apply(tape, x),
        None => Ok(x),
    }
}

/// A language model: configuration plus named parameters.
#[derive(Debug, Clone)]
pub struct Model<S> {
    config: ModelConfig,
    params: ParamStore<S>,
}

impl<S: Real> Model<S> {
    /// Freshly initialized model. Embeddings are uniform in ±0.1, projections
    /// Xavier-uniform, biases zero, layer-norm gains one.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        validate(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        match &config.backbone {
            BackboneConfig::Recurrent(c) => recurrent::init(c, &mut params, &mut rng),
            BackboneConfig::Transformer(c) => transformer::init(c, &mut params, &mut rng),
        }
        let v = config.backbone.vocab_size();
        if !tied(&config.backbone) {
            let h = output_dim(&config.backbone);
            params.push("out.weight", params::xavier(&[h, v], &mut rng));
        }
        params.push("out.bias", Tensor::zeros(&[v]));
        if needs_query_key(&config) {
            let h = output_dim(&config.backbone);
            params.push("dep_attn.wq", params::xavier(&[h, h], &mut rng));
            params.push("dep_attn.wk", params::xavier(&[h, h], &mut rng));
        }
        Ok(Model { config, params })
    }

    /// Reassembles a model from stored parameters, checking names and shapes
    /// against a freshly laid-out model of the same configuration.
    pub fn from_params(config: ModelConfig, params: ParamStore<S>) -> Result<Self, ModelError> {
        let template = Model::<S>::new(config.clone(), 0)?;
        if template.params.len() != params.len() {
            return Err(ModelError::InvalidConfig(format!(
                "expected {} parameter arrays, found {}",
                template.params.len(),
                params.len()
            )));
        }
        for (i, name) in template.params.names().iter().enumerate() {
            let got = params
                .index_of(name)
                .ok_or_else(|| ModelError::MissingParameter(name.clone()))?;
            if got != i || params.get(i).shape() != template.params.get(i).shape() {
                return Err(ModelError::InvalidConfig(format!(
                    "parameter {name} has unexpected position or shape"
                )));
            }
        }
        Ok(Model { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn flavor(&self) -> Flavor {
        self.config.flavor
    }

    pub fn uses_mixture(&self) -> bool {
        self.config.flavor == Flavor::Dmlm
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn vocab_size(&self) -> usize {
        self.config.backbone.vocab_size()
    }

    /// Width of the states fed to the output head (and to W^Q / W^K).
    pub fn hidden_size(&self) -> usize {
        output_dim(&self.config.backbone)
    }

    pub fn cast<T: Real>(&self) -> Model<T> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    pub(crate) fn param(&self, name: &str) -> Result<usize, ModelError> {
        self.params
            .index_of(name)
            .ok_or_else(|| ModelError::MissingParameter(name.to_string()))
    }

    /// Query / key projections of the recurrent dependency attention.
    pub fn query_key(&self) -> Option<(&Tensor<S>, &Tensor<S>)> {
        let q = self.params.index_of("dep_attn.wq")?;
        let k = self.params.index_of("dep_attn.wk")?;
        Some((self.params.get(q), self.params.get(k)))
    }

    /// Binds every parameter as a tape leaf.
    pub fn bind(&self, tape: &mut Tape<S>, requires_grad: bool) -> Bound {
        let vars = self
            .params
            .shared()
            .iter()
            .map(|t| tape.leaf_shared(Arc::clone(t), requires_grad))
            .collect();
        Bound { vars }
    }

    /// Like [`Model::bind`] but with parameter `index` replaced by `var`.
    pub fn bind_with(&self, tape: &mut Tape<S>, index: usize, var: Var) -> Bound {
        let vars = self
            .params
            .shared()
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if i == index {
                    var
                } else {
                    tape.leaf_shared(Arc::clone(t), false)
                }
            })
            .collect();
        Bound { vars }
    }

    pub(crate) fn check_ids(&self, ids: &[TokenId]) -> Result<(), ModelError> {
        if ids.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        let v = self.vocab_size();
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= v) {
            return Err(ModelError::IdOutOfRange { id: bad, vocab: v });
        }
        Ok(())
    }

    /// Teacher-forced pass over a batch of input sequences. Dropout is applied
    /// only when `dropout` is given.
    pub fn forward(
        &self,
        tape: &mut Tape<S>,
        bound: &Bound,
        batch: &[&[TokenId]],
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<BackboneOutput, ModelError> {
        for ids in batch {
            self.check_ids(ids)?;
        }
        let rate = self.config.backbone.dropout();
        let mut dropout = dropout.map(|rng| Dropout { rate, rng });
        match &self.config.backbone {
            BackboneConfig::Recurrent(c) => {
                recurrent::forward(self, c, tape, bound, batch, &mut dropout)
            }
            BackboneConfig::Transformer(c) => {
                transformer::forward(self, c, tape, bound, batch, &mut dropout)
            }
        }
    }

    /// Output-head logits `[T, V]` for hidden states `[T, H]`.
    pub fn logits(
        &self,
        tape: &mut Tape<S>,
        bound: &Bound,
        hidden: Var,
    ) -> Result<Var, ModelError> {
        let w = if tied(&self.config.backbone) {
            let e = bound.var(self.param("embed")?);
            tape.transpose(e)?
        } else {
            bound.var(self.param("out.weight")?)
        };
        let z = tape.matmul(hidden, w)?;
        Ok(tape.add_bias(z, bound.var(self.param("out.bias")?))?)
    }

    /// Dependency distributions `[T, V]` (rows are softmaxed logits).
    pub fn dep_probs(
        &self,
        tape: &mut Tape<S>,
        bound: &Bound,
        hidden: Var,
    ) -> Result<Var, ModelError> {
        let z = self.logits(tape, bound, hidden)?;
        Ok(tape.softmax_lastdim(z))
    }

    /// Dependency distribution for one hidden state, computed directly from
    /// the parameters.
    pub fn dep_distribution(&self, hidden_row: &[S]) -> Result<Vec<S>, ModelError> {
        let h = self.hidden_size();
        if hidden_row.len() != h {
            return Err(NumericsError::ShapeMismatch {
                op: "dep_distribution",
                left: vec![hidden_row.len()],
                right: vec![h],
            }
            .into());
        }
        let v = self.vocab_size();
        let bias = self.params.get(self.param("out.bias")?).data();
        let mut logits = bias.to_vec();
        if tied(&self.config.backbone) {
            let e = self.params.get(self.param("embed")?).data();
            for (w, logit) in logits.iter_mut().enumerate() {
                let row = &e[w * h..(w + 1) * h];
                *logit += row.iter().zip(hidden_row).map(|(&a, &b)| a * b).sum::<S>();
            }
        } else {
            let wt = self.params.get(self.param("out.weight")?).data();
            for (k, &x) in hidden_row.iter().enumerate() {
                for (w, logit) in logits.iter_mut().enumerate() {
                    *logit += x * wt[k * v + w];
                }
            }
        }
        softmax_in_place(&mut logits);
        Ok(logits)
    }

    pub fn initial_recurrent_state(&self) -> Option<RecurrentState<S>> {
        match &self.config.backbone {
            BackboneConfig::Recurrent(c) => Some(RecurrentState::zeros(c)),
            BackboneConfig::Transformer(_) => None,
        }
    }

    /// Advances a recurrent backbone by one token and returns the top hidden state.
    pub fn recurrent_step(
        &self,
        state: &mut RecurrentState<S>,
        id: TokenId,
    ) -> Result<Vec<S>, ModelError> {
        match &self.config.backbone {
            BackboneConfig::Recurrent(c) => {
                self.check_ids(&[id])?;
                recurrent::step(self, c, state, id)
            }
            BackboneConfig::Transformer(_) => Err(ModelError::InvalidConfig(
                "recurrent_step on a transformer".into(),
            )),
        }
    }
}

fn tied(b: &BackboneConfig) -> bool {
    match b {
        BackboneConfig::Recurrent(c) => c.tie_embeddings,
        BackboneConfig::Transformer(_) => true,
    }
}

fn output_dim(b: &BackboneConfig) -> usize {
    match b {
        BackboneConfig::Recurrent(c) => recurrent::layer_dims(c).last().map(|d| d.1).unwrap_or(0),
        BackboneConfig::Transformer(c) => c.model_dim,
    }
}

/// W^Q / W^K exist only for the recurrent DMLM; the transformer reuses its own attention.
fn needs_query_key(config: &ModelConfig) -> bool {
    config.flavor == Flavor::Dmlm && matches!(config.backbone, BackboneConfig::Recurrent(_))
}

fn validate(config: &ModelConfig) -> Result<(), ModelError> {
    let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
    let p = config.backbone.dropout();
    if !(0.0..1.0).contains(&p) {
        return bad("dropout must lie in [0, 1)");
    }
    if config.backbone.vocab_size() <= crate::corpus::RESERVED.len() {
        return bad("vocab_size must exceed the reserved ids");
    }
    match &config.backbone {
        BackboneConfig::Recurrent(c) => {
            if c.embed_dim == 0 || c.hidden_dim == 0 || c.num_layers == 0 {
                return bad("recurrent dimensions must be positive");
            }
        }
        BackboneConfig::Transformer(c) => {
            if c.model_dim == 0 || c.num_heads == 0 || c.num_layers == 0 || c.ffn_dim == 0 {
                return bad("transformer dimensions must be positive");
            }
            if c.model_dim % c.num_heads != 0 {
                return bad("model_dim must be divisible by num_heads");
            }
            let src = c.source_layer();
            if src < 1 || src > c.num_layers {
                return bad("attention_source_layer must lie in 1..=num_layers");
            }
            if c.max_positions == 0 {
                return bad("max_positions must be positive");
            }
        }
    }
    Ok(())
}
