use std::fs;
use std::path::{Path, PathBuf};

use dmlm_core::corpus::{deserialize_dataset, Dataset, TokenId, Vocab, BOS, EOS, UNK};
use dmlm_core::training::{load_checkpoint, AnyCheckpoint};

use crate::failure::{CmdResult, Failure};

pub fn read_text(path: &Path) -> CmdResult<String> {
    fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

pub fn write_bytes(path: &Path, bytes: impl AsRef<[u8]>) -> CmdResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::input(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CmdResult {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Internal(e.into()))?;
    text.push('\n');
    write_bytes(path, text)
}

pub fn require_file(path: &Path) -> CmdResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::input(format!("{}: no such file", path.display())))
    }
}

pub fn load_dataset(path: &Path) -> CmdResult<Dataset> {
    require_file(path)?;
    deserialize_dataset(path).map_err(|e| Failure::from(e).context(path.display()))
}

pub fn load_ckpt(path: &Path) -> CmdResult<AnyCheckpoint> {
    require_file(path)?;
    load_checkpoint(path).map_err(|e| Failure::from(e).context(path.display()))
}

/// `base` with `suffix` appended to its file name.
pub fn sibling(base: &Path, suffix: &str) -> PathBuf {
    let mut name = base.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    base.with_file_name(name)
}

/// Non-empty lines split on whitespace.
pub fn read_lines(path: &Path) -> CmdResult<Vec<Vec<String>>> {
    Ok(read_text(path)?
        .lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect::<Vec<_>>())
        .filter(|l| !l.is_empty())
        .collect())
}

/// Ids of whitespace-separated words. A word missing from the vocabulary is
/// retried lowercased and otherwise becomes UNK with a warning.
pub fn encode_words<S: AsRef<str>>(vocab: &Vocab, words: &[S]) -> Vec<TokenId> {
    words
        .iter()
        .map(|w| {
            let w = w.as_ref();
            if vocab.contains(w) {
                return vocab.encode(w);
            }
            let lower = w.to_lowercase();
            if vocab.contains(&lower) {
                return vocab.encode(&lower);
            }
            log::warn!("{w:?} is not in the vocabulary; using UNK");
            UNK
        })
        .collect()
}

/// `[BOS, words.., EOS]`.
pub fn framed(vocab: &Vocab, words: &[String]) -> Vec<TokenId> {
    let mut ids = vec![BOS];
    ids.extend(encode_words(vocab, words));
    ids.push(EOS);
    ids
}
