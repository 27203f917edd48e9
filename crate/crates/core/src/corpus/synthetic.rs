//! Seeded generators for parsed corpora used in tests, benches and the
//! acceptance suite.

use rand::seq::SliceRandom;
use rand::Rng;

use super::ParsedSentence;

/// Random dependency tree over `n` positions as a 1-based head array.
/// Trees are not necessarily projective.
pub fn random_heads<R: Rng>(rng: &mut R, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (1..=n).collect();
    order.shuffle(rng);
    let mut heads = vec![0; n];
    for k in 1..n {
        let parent = order[rng.gen_range(0..k)];
        heads[order[k] - 1] = parent;
    }
    heads
}

/// Random sentence over the surfaces `w0..w{vocab-1}` with a random tree.
pub fn random_sentence<R: Rng>(rng: &mut R, len: usize, vocab: usize) -> ParsedSentence {
    let words: Vec<String> = (0..len)
        .map(|_| format!("w{}", rng.gen_range(0..vocab)))
        .collect();
    let heads = random_heads(rng, len);
    ParsedSentence::from_heads(&words, &heads).expect("generated tree is valid")
}

/// Random projective tree over `n` positions: each span picks a uniform head
/// and the heads of its left and right sub-spans attach to it.
pub fn random_projective_heads<R: Rng>(rng: &mut R, n: usize) -> Vec<usize> {
    fn build<R: Rng>(rng: &mut R, l: usize, r: usize, heads: &mut [usize]) -> Option<usize> {
        if l > r {
            return None;
        }
        let h = rng.gen_range(l..=r);
        if h > l {
            if let Some(c) = build(rng, l, h - 1, heads) {
                heads[c - 1] = h;
            }
        }
        if let Some(c) = build(rng, h + 1, r, heads) {
            heads[c - 1] = h;
        }
        Some(h)
    }
    let mut heads = vec![0; n];
    build(rng, 1, n, &mut heads);
    heads
}

/// [`random_sentence`] with a projective tree.
pub fn random_projective_sentence<R: Rng>(rng: &mut R, len: usize, vocab: usize) -> ParsedSentence {
    let words: Vec<String> = (0..len)
        .map(|_| format!("w{}", rng.gen_range(0..vocab)))
        .collect();
    let heads = random_projective_heads(rng, len);
    ParsedSentence::from_heads(&words, &heads).expect("generated tree is valid")
}

/// Parameters of the long-range agreement corpus.
#[derive(Debug, Clone)]
pub struct AgreementConfig {
    /// Number of subject/verb pairs; subject `n{i}` always takes verb `v{i}`.
    pub pairs: usize,
    /// Size of the distractor pool.
    pub distractors: usize,
    pub min_gap: usize,
    pub max_gap: usize,
}

impl Default for AgreementConfig {
    fn default() -> Self {
        AgreementConfig {
            pairs: 16,
            distractors: 24,
            min_gap: 3,
            max_gap: 8,
        }
    }
}

/// `n{i} d.. d.. v{i} .`: the verb is determined by the sentence-initial
/// subject and separated from it by a random run of distractor words.
///
/// Tree: the verb is the root; the subject, the last distractor and the final
/// period attach to the verb; each other distractor attaches to its successor.
pub fn agreement_sentence<R: Rng>(rng: &mut R, cfg: &AgreementConfig) -> ParsedSentence {
    let subject = rng.gen_range(0..cfg.pairs);
    let gap = rng.gen_range(cfg.min_gap..=cfg.max_gap);
    let mut words = vec![format!("n{subject}")];
    for _ in 0..gap {
        words.push(format!("d{}", rng.gen_range(0..cfg.distractors)));
    }
    words.push(format!("v{subject}"));
    words.push(".".to_string());
    let verb = gap + 2;
    let mut heads = vec![verb];
    for k in 0..gap {
        let pos = k + 2;
        heads.push(if k + 1 == gap { verb } else { pos + 1 });
    }
    heads.push(0);
    heads.push(verb);
    ParsedSentence::from_heads(&words, &heads).expect("agreement tree is valid")
}

pub fn agreement_corpus<R: Rng>(rng: &mut R, cfg: &AgreementConfig, n: usize) -> Vec<ParsedSentence> {
    (0..n).map(|_| agreement_sentence(rng, cfg)).collect()
}

/// The example sentence with its dependency tree.
pub fn red_figures() -> ParsedSentence {
    ParsedSentence::from_heads(
        &["red", "figures", "on", "the", "screen", "indicate", "falling", "stocks"],
        &[2, 6, 5, 5, 2, 0, 8, 6],
    )
    .expect("valid tree")
}

