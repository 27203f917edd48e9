//! Treebank ingestion: CoNLL-U reading, vocabularies, future-dependent-token
//! targets and the binary dataset format.

mod conllu;
mod dataset;
pub mod synthetic;
mod targets;
mod vocab;

pub use conllu::{parse_conllu, ParsedSentence, ParsedToken};
pub use dataset::{
    deserialize_dataset, prepare, serialize_dataset, Dataset, DatasetManifest, PrepareConfig,
    PrepareStats, DATASET_MAGIC, DATASET_VERSION,
};
pub use targets::{derive_dependency_targets, TargetedSequence};
pub use vocab::{build_vocab, TokenId, Vocab, BOS, EOS, PAD, RESERVED, UNK};

use std::path::Path;

use thiserror::Error;

use crate::binio::FrameError;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("sentence {sentence} (starting at line {line}): invalid tree: {reason}")]
    InvalidTree {
        sentence: usize,
        line: usize,
        reason: String,
    },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("version mismatch: {0}")]
    VersionMismatch(String),
    #[error("checksum mismatch: {0}")]
    ChecksumMismatch(String),
    #[error("malformed dataset: {0}")]
    Malformed(String),
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

impl From<FrameError> for CorpusError {
    fn from(e: FrameError) -> Self {
        match e {
            FrameError::BadMagic { .. } | FrameError::BadVersion { .. } => {
                CorpusError::VersionMismatch(e.to_string())
            }
            FrameError::Checksum { .. } => CorpusError::ChecksumMismatch(e.to_string()),
            FrameError::Truncated(_) => CorpusError::Malformed(e.to_string()),
        }
    }
}
