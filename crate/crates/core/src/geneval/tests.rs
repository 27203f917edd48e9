use super::*;
use crate::backbone::{BackboneConfig, Flavor, Model, ModelConfig, RecurrentConfig, TransformerConfig};
use crate::corpus::synthetic::random_sentence;
use crate::corpus::{prepare, PrepareConfig, TargetedSequence, TokenId, BOS, EOS};
use crate::training::{mixture_lm_loss, run_training, Phase, TrainConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn rec(vocab: usize, flavor: Flavor) -> ModelConfig {
    ModelConfig {
        backbone: BackboneConfig::Recurrent(RecurrentConfig {
            vocab_size: vocab,
            embed_dim: 8,
            hidden_dim: 8,
            num_layers: 1,
            dropout: 0.0,
            tie_embeddings: true,
        }),
        flavor,
    }
}

fn tr(vocab: usize) -> ModelConfig {
    ModelConfig {
        backbone: BackboneConfig::Transformer(TransformerConfig {
            vocab_size: vocab,
            model_dim: 8,
            num_heads: 2,
            num_layers: 2,
            ffn_dim: 8,
            dropout: 0.0,
            attention_source_layer: None,
            max_positions: 12,
        }),
        flavor: Flavor::Dmlm,
    }
}

/// Zero weights with the output bias set to `bias`.
fn biased(cfg: ModelConfig, bias: &[f64]) -> Model<f64> {
    let mut m = Model::<f64>::new(cfg, 0).unwrap();
    for i in 0..m.params().len() {
        m.params_mut().get_mut(i).data_mut().fill(0.0);
    }
    let b = m.params().index_of("out.bias").unwrap();
    m.params_mut().get_mut(b).data_mut().copy_from_slice(bias);
    m
}

#[test]
fn nucleus_small_p_is_argmax() {
    let d = [0.6, 0.3, 0.1];
    assert_eq!(nucleus_set(&d, 0.5).unwrap(), vec![(0, 1.0)]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        assert_eq!(nucleus_sample(&d, 0.5, &mut rng).unwrap(), 0);
    }
}

#[test]
fn nucleus_p09_frequencies() {
    let d = [0.6, 0.3, 0.1];
    let set = nucleus_set(&d, 0.9).unwrap();
    assert_eq!(set.len(), 2);
    assert!((set[0].1 - 2.0 / 3.0).abs() < 1e-12 && (set[1].1 - 1.0 / 3.0).abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut zeros = 0;
    for _ in 0..10_000 {
        let t = nucleus_sample(&d, 0.9, &mut rng).unwrap();
        assert!(t < 2);
        zeros += (t == 0) as usize;
    }
    let f = zeros as f64 / 10_000.0;
    assert!((0.64..=0.69).contains(&f), "{f}");
}

#[test]
fn nucleus_full_mass_and_ties() {
    let d = [0.25f32, 0.25, 0.25, 0.25];
    assert_eq!(nucleus_set(&d, 1.0).unwrap().len(), 4);
    let ids: Vec<TokenId> = nucleus_set(&d, 0.5).unwrap().iter().map(|x| x.0).collect();
    assert_eq!(ids, vec![0, 1]);
    let d = [0.1, 0.4, 0.1, 0.4];
    let ids: Vec<TokenId> = nucleus_set(&d, 0.8).unwrap().iter().map(|x| x.0).collect();
    assert_eq!(ids, vec![1, 3]);
}

#[test]
fn nucleus_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    assert!(matches!(
        nucleus_sample(&[0.0, 0.0], 0.5, &mut rng),
        Err(GenError::DegenerateDistribution)
    ));
    assert!(matches!(
        nucleus_sample(&[f64::NAN, -1.0], 0.5, &mut rng),
        Err(GenError::DegenerateDistribution)
    ));
    for p in [0.0, -0.1, 1.5, f64::NAN] {
        assert!(matches!(nucleus_set(&[1.0], p), Err(GenError::InvalidP(_))));
    }
}

#[test]
fn distinct_examples() {
    let s = vec![words("a b a b"), words("a b c d")];
    assert!((distinct_n(&s, 2).unwrap() - 4.0 / 6.0).abs() < 1e-12);
    let same = vec![words("x x x"), words("x x")];
    assert!((distinct_n(&same, 1).unwrap() - 0.2).abs() < 1e-12);
    assert_eq!(distinct_n(&[words("a b c d e")], 3).unwrap(), 1.0);
    assert!(matches!(distinct_n(&[words("a")], 2), Err(GenError::NoNgrams(2))));
}

#[test]
#[allow(clippy::approx_constant)]
fn bleu_examples() {
    let h = vec![words("a b c d")];
    let r = vec![vec![words("a b c e")]];
    assert!((corpus_bleu(&h, &r, 2).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
    assert!((corpus_bleu(&h, &r, 2).unwrap() - 0.7071).abs() < 1e-4);
    assert_eq!(corpus_bleu(&h, &[vec![words("a b c d")]], 4).unwrap(), 1.0);
    assert_eq!(corpus_bleu(&h, &[vec![words("w x y z")]], 4).unwrap(), 0.0);
    assert!(matches!(
        corpus_bleu(&h, &[], 4),
        Err(GenError::LengthMismatch { hyps: 1, refs: 0 })
    ));
}

#[test]
fn bleu_smoothing_and_brevity() {
    // p1 = 2/2, p2 = 1/1 matched; reference length 4 gives BP = exp(1 - 4/2).
    let h = vec![words("a b")];
    let r = vec![vec![words("a b c d"), words("q r s t u v")]];
    let want = (1.0f64 - 2.0).exp();
    assert!((corpus_bleu(&h, &r, 2).unwrap() - want).abs() < 1e-12);
    // No matched bigram: p2 smoothed to (0 + 1) / (2 + 1).
    let h = vec![words("a c b")];
    let r = vec![vec![words("a b c")]];
    let want = (1.0f64 * (1.0 / 3.0)).sqrt();
    assert!((corpus_bleu(&h, &r, 2).unwrap() - want).abs() < 1e-12);
}

#[test]
fn self_bleu_examples() {
    let same = vec![words("a b c"), words("a b c"), words("a b c")];
    assert_eq!(self_bleu(&same, 2).unwrap(), 1.0);
    let disjoint = vec![words("a b"), words("c d"), words("e f")];
    assert_eq!(self_bleu(&disjoint, 2).unwrap(), 0.0);
    // Samples 1 and 2 each score sqrt(2/3 · 1/2) against the others; sample 3 scores 0.
    let fixture = vec![words("a b c"), words("a b d"), words("e f g")];
    let want = 2.0 * (1.0f64 / 3.0).sqrt() / 3.0;
    let got = self_bleu(&fixture, 2).unwrap();
    assert!((got - want).abs() < 1e-12);
    assert!((got - 0.3849).abs() < 1e-4);
    assert!(matches!(self_bleu(&[words("a")], 2), Err(GenError::TooFewSamples(1))));
}

#[test]
fn perplexity_examples() {
    let lp = [0.5f64.ln(), 0.25f64.ln()];
    assert!((perplexity_from_log_probs(&lp) - 8f64.sqrt()).abs() < 1e-12);
    assert!((perplexity_from_log_probs(&lp) - 2.8284).abs() < 1e-4);
    for flavor in [Flavor::Dmlm, Flavor::Baseline] {
        let m = biased(rec(10, flavor), &[0.0; 10]);
        let corpus = vec![TargetedSequence::from_ids(vec![BOS, 4, 5, 6, EOS])];
        assert!((perplexity(&m, &corpus, 64).unwrap() - 10.0).abs() < 1e-9);
    }
    let m = biased(rec(10, Flavor::Dmlm), &[0.0; 10]);
    assert!(matches!(perplexity(&m, &[], 4), Err(GenError::EmptyCorpus)));
}

#[test]
fn perplexity_is_exp_mixture_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let corpus: Vec<TargetedSequence> = (0..7)
        .map(|i| {
            let mut ids = vec![BOS];
            ids.extend((0..2 + i % 4).map(|_| rng.gen_range(4..15)));
            ids.push(EOS);
            TargetedSequence::from_ids(ids)
        })
        .collect();
    for cfg in [rec(15, Flavor::Dmlm), tr(15)] {
        let m = Model::<f64>::new(cfg, 6).unwrap();
        let ppl = perplexity(&m, &corpus, 3).unwrap();
        let loss = mixture_lm_loss(&m, &corpus, 3).unwrap();
        assert!((ppl - loss.exp()).abs() < 1e-6);
    }
}

#[test]
fn lm_score_uniform_oracle() {
    let m = biased(rec(100, Flavor::Baseline), &[0.0; 100]);
    let samples = vec![vec![BOS, 10, 20, EOS], vec![BOS, 99, EOS]];
    let s = lm_score(&m, &samples, 64).unwrap();
    assert!((s - 100f64.ln()).abs() < 1e-9);
    assert!((s - 4.6052).abs() < 1e-4);
    assert!(matches!(lm_score(&m, &[], 4), Err(GenError::EmptySamples)));
}

fn toy_corpus(n: usize, seed: u64) -> (usize, Vec<TargetedSequence>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sentences: Vec<_> = (0..n).map(|_| random_sentence(&mut rng, 5, 30)).collect();
    let ds = prepare(&sentences, &PrepareConfig::default(), None).unwrap();
    (ds.vocab.len(), ds.sequences)
}

#[test]
fn lm_score_prefers_training_text() {
    let (v, data) = toy_corpus(6, 7);
    let cfg = TrainConfig {
        phase: Phase::Baseline,
        lr: Some(0.02),
        batch_size: 6,
        max_epochs: 60,
        patience: 60,
        ..TrainConfig::default()
    };
    let m = Model::<f32>::new(rec(v, Flavor::Baseline), 1).unwrap();
    let trained = run_training(&cfg, &data, &[], m, None, &mut |_| {}).unwrap().model;
    let own: Vec<Vec<TokenId>> = data.iter().map(|s| s.ids.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let random: Vec<Vec<TokenId>> = own
        .iter()
        .map(|s| {
            let mut r = s.clone();
            for x in &mut r[1..s.len() - 1] {
                *x = rng.gen_range(4..v as TokenId);
            }
            r
        })
        .collect();
    assert!(lm_score(&trained, &own, 0).unwrap() < lm_score(&trained, &random, 0).unwrap());
}

#[test]
fn rlm_score_contract() {
    let (v, data) = toy_corpus(6, 9);
    let samples: Vec<Vec<TokenId>> = data.iter().map(|s| s.ids.clone()).collect();
    let config = RlmConfig {
        model: rec(v, Flavor::Dmlm),
        train: TrainConfig {
            max_epochs: 3,
            ..TrainConfig::default()
        },
        min_samples: 500,
        seed: 0,
    };
    assert!(matches!(
        rlm_score(&samples, &samples, &config),
        Err(GenError::InsufficientSamples { have: 6, need: 500 })
    ));
    let small = RlmConfig {
        min_samples: 4,
        ..config
    };
    let a = rlm_score(&samples, &samples[..2], &small).unwrap();
    let b = rlm_score(&samples, &samples[..2], &small).unwrap();
    assert!(a.is_finite() && a > 0.0);
    assert_eq!(a.to_bits(), b.to_bits());
}

#[test]
fn forced_eos_halts_immediately() {
    let mut bias = vec![0.0; 9];
    bias[EOS as usize] = 1000.0;
    for cfg in [rec(9, Flavor::Dmlm), rec(9, Flavor::Baseline), tr(9)] {
        let m = biased(cfg, &bias);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for p in [0.5, 1.0] {
            assert_eq!(generate(&m, &[], p, 20, 64, &mut rng).unwrap(), vec![EOS]);
        }
    }
}

#[test]
fn generation_is_seeded_and_bounded() {
    for cfg in [rec(14, Flavor::Dmlm), tr(14)] {
        let m = Model::<f64>::new(cfg, 3).unwrap();
        let prompt = [5, 6];
        let a = generate(&m, &prompt, 0.9, 7, 4, &mut sample_rng(11, 0)).unwrap();
        let b = generate(&m, &prompt, 0.9, 7, 4, &mut sample_rng(11, 0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(&a[..2], &prompt);
        assert!(a.len() <= 2 + 7);
        assert!(a.len() == 9 || *a.last().unwrap() == EOS);
        let many = generate_many(&m, &prompt, 0.9, 7, 4, 11, 5).unwrap();
        assert_eq!(many.len(), 5);
        assert_eq!(many[0], a);
        for (i, s) in many.iter().enumerate() {
            assert_eq!(s, &generate(&m, &prompt, 0.9, 7, 4, &mut sample_rng(11, i as u64)).unwrap());
        }
    }
    let m = Model::<f64>::new(tr(14), 3).unwrap();
    // Capacity of 12 positions: BOS plus at most 11 tokens.
    let long = generate(&m, &[], 1.0, 100, 0, &mut sample_rng(1, 0)).unwrap();
    assert!(long.len() <= 12);
    assert!(matches!(
        generate(&m, &[], 0.5, 0, 0, &mut sample_rng(1, 0)),
        Err(GenError::InvalidMaxLen)
    ));
    assert!(generate(&m, &[40], 0.5, 3, 0, &mut sample_rng(1, 0)).is_err());
}

#[test]
fn report_serializes() {
    let mut r = GenerationReport {
        samples: vec!["a b".into()],
        settings: Some(GenerationSettings {
            p: 0.5,
            max_len: 10,
            seed: 1,
            window: 64,
            prompt: None,
        }),
        metrics: Default::default(),
    };
    r.metrics.insert("distinct-2".into(), 1.0);
    let json = serde_json::to_string(&r).unwrap();
    assert_eq!(serde_json::from_str::<GenerationReport>(&json).unwrap(), r);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nucleus_draws_stay_in_set(
        raw in proptest::collection::vec(0.0f64..1.0, 1..12),
        p in 0.01f64..1.0,
        seed in 0u64..1000,
    ) {
        prop_assume!(raw.iter().sum::<f64>() > 1e-6);
        let total: f64 = raw.iter().sum();
        let d: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let set = nucleus_set(&d, p).unwrap();
        let mass: f64 = set.iter().map(|x| d[x.0 as usize]).sum();
        prop_assert!(mass >= p - 1e-9);
        // Minimality: dropping the smallest member falls below p.
        let smallest = set.last().unwrap().0 as usize;
        prop_assert!(mass - d[smallest] < p - 1e-9 || set.len() == 1 || d[smallest] == 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..200 {
            let t = nucleus_sample(&d, p, &mut rng).unwrap();
            prop_assert!(set.iter().any(|x| x.0 == t));
        }
    }

    #[test]
    fn metrics_are_permutation_invariant(
        samples in proptest::collection::vec(proptest::collection::vec(0u8..5, 1..6), 2..6),
        seed in 0u64..100,
    ) {
        let mut shuffled = samples.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(distinct_n(&samples, 1).unwrap(), distinct_n(&shuffled, 1).unwrap());
        let a = self_bleu(&samples, 2).unwrap();
        let b = self_bleu(&shuffled, 2).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
        let refs: Vec<Vec<Vec<u8>>> = samples.iter().rev().map(|s| vec![s.clone()]).collect();
        let bleu = corpus_bleu(&samples, &refs, 4).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&bleu));
    }
}
