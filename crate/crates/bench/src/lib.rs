//! Shared fixtures for the criterion benches.

use dmlm_core::corpus::synthetic::random_projective_sentence;
use dmlm_core::{
    prepare, BackboneConfig, Dataset, Flavor, Model, ModelConfig, ParsedSentence, PrepareConfig, RecurrentConfig,
    TransformerConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn sentences(n: usize, max_len: usize, vocab: usize) -> Vec<ParsedSentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(4..=max_len);
            random_projective_sentence(&mut rng, len, vocab)
        })
        .collect()
}

pub fn dataset(n: usize, max_len: usize, vocab: usize) -> Dataset {
    prepare(&sentences(n, max_len, vocab), &PrepareConfig::default(), None).expect("fixture prepares")
}

pub fn recurrent(vocab: usize, hidden: usize, flavor: Flavor) -> Model<f32> {
    let cfg = ModelConfig {
        backbone: BackboneConfig::Recurrent(RecurrentConfig {
            vocab_size: vocab,
            embed_dim: hidden,
            hidden_dim: hidden,
            num_layers: 2,
            dropout: 0.0,
            tie_embeddings: true,
        }),
        flavor,
    };
    Model::new(cfg, 0).expect("valid config")
}

pub fn transformer(vocab: usize, hidden: usize, flavor: Flavor) -> Model<f32> {
    let cfg = ModelConfig {
        backbone: BackboneConfig::Transformer(TransformerConfig {
            vocab_size: vocab,
            model_dim: hidden,
            num_heads: 4,
            num_layers: 2,
            ffn_dim: 4 * hidden,
            dropout: 0.0,
            attention_source_layer: None,
            max_positions: 128,
        }),
        flavor,
    };
    Model::new(cfg, 0).expect("valid config")
}
