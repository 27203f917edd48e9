use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    build_vocab, derive_dependency_targets, CorpusError, ParsedSentence, TargetedSequence, Vocab,
};
use crate::binio::{Reader, Writer};

pub const DATASET_MAGIC: &[u8; 4] = b"DMLM";
pub const DATASET_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrepareConfig {
    pub min_count: usize,
    pub max_size: usize,
    /// Longer sentences are skipped rather than truncated.
    pub max_len: usize,
    pub lowercase: bool,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        PrepareConfig {
            min_count: 1,
            max_size: 50_000,
            max_len: 64,
            lowercase: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrepareStats {
    pub sentences_read: usize,
    pub sentences_kept: usize,
    pub skipped_too_long: usize,
    pub tokens: usize,
    pub unk_tokens: usize,
    pub vocab_size: usize,
    pub target_positions: usize,
    pub empty_target_positions: usize,
    pub empty_z_rate: f64,
    pub mean_z: f64,
}

/// Training-ready sequences plus everything needed to decode them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub vocab: Vocab,
    pub config: PrepareConfig,
    pub stats: PrepareStats,
    pub sequences: Vec<TargetedSequence>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    vocab: Vocab,
    config: PrepareConfig,
    stats: PrepareStats,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub path: PathBuf,
    pub sequences: usize,
    pub bytes: usize,
    pub crc32: u32,
}

/// Turns parsed sentences into a dataset. With `vocab == None` a vocabulary
/// is built from the kept sentences; otherwise the given one is reused (for
/// validation / test splits).
pub fn prepare(
    sentences: &[ParsedSentence],
    config: &PrepareConfig,
    vocab: Option<Vocab>,
) -> Result<Dataset, CorpusError> {
    let kept: Vec<ParsedSentence> = sentences
        .iter()
        .filter(|s| s.len() <= config.max_len)
        .map(|s| if config.lowercase { s.lowercased() } else { s.clone() })
        .collect();
    let vocab = match vocab {
        Some(v) => v,
        None => build_vocab(&kept, config.min_count, config.max_size)?,
    };
    let sequences: Vec<TargetedSequence> = kept
        .par_iter()
        .map(|s| derive_dependency_targets(s, &vocab))
        .collect();

    let tokens: usize = kept.iter().map(ParsedSentence::len).sum();
    let unk_tokens = sequences
        .iter()
        .flat_map(|s| s.ids.iter())
        .filter(|&&id| id == super::UNK)
        .count();
    let target_positions: usize = sequences.iter().map(|s| s.targets.len()).sum();
    let empty: usize = sequences
        .iter()
        .flat_map(|s| s.targets.iter())
        .filter(|z| z.is_empty())
        .count();
    let terms: usize = sequences.iter().map(TargetedSequence::num_dependency_terms).sum();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let stats = PrepareStats {
        sentences_read: sentences.len(),
        sentences_kept: kept.len(),
        skipped_too_long: sentences.len() - kept.len(),
        tokens,
        unk_tokens,
        vocab_size: vocab.len(),
        target_positions,
        empty_target_positions: empty,
        empty_z_rate: ratio(empty, target_positions),
        mean_z: ratio(terms, target_positions),
    };
    Ok(Dataset {
        vocab,
        config: config.clone(),
        stats,
        sequences,
    })
}

impl Dataset {
    pub fn to_bytes(&self) -> Result<Vec<u8>, CorpusError> {
        let header = serde_json::to_vec(&Header {
            vocab: self.vocab.clone(),
            config: self.config.clone(),
            stats: self.stats.clone(),
        })
        .map_err(|e| CorpusError::Malformed(e.to_string()))?;
        let mut w = Writer::new(DATASET_MAGIC, DATASET_VERSION);
        w.blob(&header);
        w.u32(self.sequences.len() as u32);
        for seq in &self.sequences {
            w.u32(seq.ids.len() as u32);
            for &id in &seq.ids {
                w.u32(id);
            }
            if seq.targets.len() + 1 != seq.ids.len() {
                return Err(CorpusError::Malformed(
                    "targets must have one entry per non-final id".into(),
                ));
            }
            for z in &seq.targets {
                w.u32(z.len() as u32);
                for &id in z {
                    w.u32(id);
                }
            }
        }
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CorpusError> {
        let mut r = Reader::open(bytes, DATASET_MAGIC, DATASET_VERSION)?;
        let header: Header = serde_json::from_slice(r.blob("header")?)
            .map_err(|e| CorpusError::Malformed(format!("header: {e}")))?;
        let n = r.u32("sequence count")? as usize;
        let vocab_len = header.vocab.len() as u32;
        let mut sequences = Vec::with_capacity(n);
        let read_ids = |r: &mut Reader, count: usize| -> Result<Vec<u32>, CorpusError> {
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                let id = r.u32("token id")?;
                if id >= vocab_len {
                    return Err(CorpusError::Malformed(format!("token id {id} outside vocabulary")));
                }
                out.push(id);
            }
            Ok(out)
        };
        for _ in 0..n {
            let len = r.u32("sequence length")? as usize;
            let ids = read_ids(&mut r, len)?;
            let mut targets = Vec::with_capacity(len.saturating_sub(1));
            for _ in 1..len {
                let c = r.u32("target count")? as usize;
                targets.push(read_ids(&mut r, c)?);
            }
            sequences.push(TargetedSequence { ids, targets });
        }
        if !r.is_done() {
            return Err(CorpusError::Malformed("trailing bytes after sequences".into()));
        }
        Ok(Dataset {
            vocab: header.vocab,
            config: header.config,
            stats: header.stats,
            sequences,
        })
    }
}

pub fn serialize_dataset(dataset: &Dataset, path: &Path) -> Result<DatasetManifest, CorpusError> {
    let bytes = dataset.to_bytes()?;
    std::fs::write(path, &bytes).map_err(|e| CorpusError::io(path, e))?;
    let crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("crc"));
    Ok(DatasetManifest {
        path: path.to_path_buf(),
        sequences: dataset.sequences.len(),
        bytes: bytes.len(),
        crc32: crc,
    })
}

pub fn deserialize_dataset(path: &Path) -> Result<Dataset, CorpusError> {
    let bytes = std::fs::read(path).map_err(|e| CorpusError::io(path, e))?;
    Dataset::from_bytes(&bytes)
}
