use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{CorpusError, ParsedSentence};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;

/// Surfaces of the reserved ids, in id order.
pub const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Word-level vocabulary. Ids `0..4` are reserved; corpus tokens start at 4.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    surfaces: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, TokenId>,
}

impl Vocab {
    /// Rebuilds a vocabulary from its surfaces in id order (reserved first).
    pub fn from_surfaces(surfaces: Vec<String>) -> Result<Self, CorpusError> {
        if surfaces.len() < RESERVED.len()
            || surfaces.iter().zip(RESERVED).any(|(a, b)| a != b)
        {
            return Err(CorpusError::InvalidVocab(
                "reserved entries missing or out of order".into(),
            ));
        }
        let mut index = HashMap::with_capacity(surfaces.len());
        for (id, s) in surfaces.iter().enumerate().skip(RESERVED.len()) {
            if RESERVED.contains(&s.as_str()) {
                return Err(CorpusError::InvalidVocab(format!("{s:?} is reserved")));
            }
            if index.insert(s.clone(), id as TokenId).is_some() {
                return Err(CorpusError::InvalidVocab(format!("duplicate surface {s:?}")));
            }
        }
        Ok(Vocab { surfaces, index })
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Id of a corpus surface; reserved surfaces and unknown words map to UNK.
    pub fn encode(&self, surface: &str) -> TokenId {
        self.index.get(surface).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, surface: &str) -> bool {
        self.index.contains_key(surface)
    }

    pub fn decode(&self, id: TokenId) -> Option<&str> {
        self.surfaces.get(id as usize).map(String::as_str)
    }

    pub fn surfaces(&self) -> &[String] {
        &self.surfaces
    }

    pub fn encode_words<'a>(&self, words: impl IntoIterator<Item = &'a str>) -> Vec<TokenId> {
        words.into_iter().map(|w| self.encode(w)).collect()
    }

    /// Space-joined surfaces, skipping BOS/EOS/PAD.
    pub fn decode_text(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .filter(|&&id| id != BOS && id != EOS && id != PAD)
            .map(|&id| self.decode(id).unwrap_or(RESERVED[UNK as usize]))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = CorpusError;
    fn try_from(v: Vec<String>) -> Result<Self, Self::Error> {
        Vocab::from_surfaces(v)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.surfaces
    }
}

/// Keeps tokens seen at least `min_count` times, most frequent first (ties by
/// surface), capped at `max_size` entries including the four reserved ids.
pub fn build_vocab(
    sentences: &[ParsedSentence],
    min_count: usize,
    max_size: usize,
) -> Result<Vocab, CorpusError> {
    if min_count < 1 {
        return Err(CorpusError::InvalidConfig("min_count must be at least 1".into()));
    }
    if max_size <= RESERVED.len() {
        return Err(CorpusError::InvalidConfig(format!(
            "max_size must exceed {}",
            RESERVED.len()
        )));
    }
    if sentences.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for s in sentences {
        for w in s.surfaces() {
            if !RESERVED.contains(&w) {
                *counts.entry(w).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_count)
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_size - RESERVED.len());

    let surfaces = RESERVED
        .iter()
        .map(|s| s.to_string())
        .chain(ranked.into_iter().map(|(w, _)| w.to_string()))
        .collect();
    Vocab::from_surfaces(surfaces)
}
