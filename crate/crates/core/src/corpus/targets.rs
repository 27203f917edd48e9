use serde::{Deserialize, Serialize};

use super::{ParsedSentence, TokenId, Vocab, BOS, EOS};

/// Encoded sentence `[BOS, x_1..x_T, EOS]` with the future-dependent tokens of
/// every non-final position.
///
/// `targets[j]` belongs to `ids[j]` and is what the model should predict after
/// reading `ids[0..=j]`; `targets.len() == ids.len() - 1`. Multisets are stored
/// in order of the dependent's position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetedSequence {
    pub ids: Vec<TokenId>,
    pub targets: Vec<Vec<TokenId>>,
}

impl TargetedSequence {
    /// Number of tokens predicted by a language model over this sequence
    /// (every token after BOS, EOS included).
    pub fn num_predictions(&self) -> usize {
        self.ids.len().saturating_sub(1)
    }

    pub fn num_dependency_terms(&self) -> usize {
        self.targets.iter().map(Vec::len).sum()
    }

    /// Plain next-token sequence without dependency targets.
    pub fn from_ids(ids: Vec<TokenId>) -> Self {
        let n = ids.len().saturating_sub(1);
        TargetedSequence {
            ids,
            targets: vec![Vec::new(); n],
        }
    }
}

/// Derives the future-dependent multisets of a parsed sentence.
///
/// The future dependents of word `i` are its children at later positions plus
/// its head when the head comes later. BOS plays the role of ROOT, so
/// `targets[0]` is the root word; the root word's own head lies in the past and
/// is replaced by EOS.
pub fn derive_dependency_targets(sentence: &ParsedSentence, vocab: &Vocab) -> TargetedSequence {
    let n = sentence.len();
    let mut ids = Vec::with_capacity(n + 2);
    ids.push(BOS);
    ids.extend(sentence.surfaces().map(|s| vocab.encode(s)));
    ids.push(EOS);

    let mut targets: Vec<Vec<(usize, TokenId)>> = vec![Vec::new(); n + 1];
    // A dependent at position c (1-based) with head h is attributed to the
    // earlier endpoint; h == 0 is ROOT, i.e. BOS at index 0.
    for tok in sentence.tokens() {
        let (c, h) = (tok.position, tok.head);
        if h < c {
            targets[h].push((c, ids[c]));
        } else {
            targets[c].push((h, ids[h]));
        }
    }
    let root = sentence.root();
    targets[root].push((n + 1, EOS));

    TargetedSequence {
        ids,
        targets: targets
            .into_iter()
            .map(|mut t| {
                t.sort_by_key(|&(pos, _)| pos);
                t.into_iter().map(|(_, id)| id).collect()
            })
            .collect(),
    }
}
