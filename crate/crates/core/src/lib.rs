//! Dependency-based mixture language models: target derivation from
//! dependency trees, recurrent and transformer backbones trained to predict
//! future dependents, attention-weighted mixture decoding, and generation
//! metrics.

mod binio;
pub mod backbone;
pub mod corpus;
pub mod geneval;
pub mod mixture;
pub mod numerics;
pub mod training;

pub use backbone::{
    BackboneConfig, Flavor, Model, ModelConfig, ModelError, RecurrentConfig, TransformerConfig,
};
pub use corpus::{
    derive_dependency_targets, parse_conllu, prepare, CorpusError, Dataset, ParsedSentence,
    PrepareConfig, TargetedSequence, TokenId, Vocab,
};
pub use geneval::{GenError, GenerationReport};
pub use mixture::{inference_step, sequence_log_probs, DecodeState, MixtureError};
pub use numerics::{DType, Real, Tensor};
pub use training::{Checkpoint, CheckpointMeta, Phase, TrainConfig, TrainError};
