use std::path::PathBuf;

use clap::ArgAction;
use dmlm_core::corpus::{parse_conllu, prepare, serialize_dataset, PrepareConfig};

use crate::failure::{CmdResult, Failure};
use crate::io;

#[derive(clap::Args)]
pub struct Args {
    /// CoNLL-U files, concatenated in the given order.
    #[arg(long, num_args = 1.., required = true)]
    conllu: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    min_count: usize,
    #[arg(long, default_value_t = 50_000)]
    max_size: usize,
    /// Sentences with more tokens are skipped.
    #[arg(long, default_value_t = 64)]
    max_len: usize,
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    lowercase: bool,
    /// Reuse the vocabulary of an existing dataset (for validation and test splits).
    #[arg(long)]
    vocab_from: Option<PathBuf>,
    /// Statistics output; defaults to `<out>.stats.json`.
    #[arg(long)]
    stats: Option<PathBuf>,
}

pub fn run(args: Args) -> CmdResult {
    for path in &args.conllu {
        io::require_file(path)?;
    }
    let vocab = match &args.vocab_from {
        Some(p) => Some(io::load_dataset(p)?.vocab),
        None => None,
    };
    let mut sentences = Vec::new();
    for path in &args.conllu {
        let text = io::read_text(path)?;
        let parsed = parse_conllu(&text).map_err(|e| Failure::from(e).context(path.display()))?;
        sentences.extend(parsed);
    }
    let config = PrepareConfig {
        min_count: args.min_count,
        max_size: args.max_size,
        max_len: args.max_len,
        lowercase: args.lowercase,
    };
    let dataset = prepare(&sentences, &config, vocab)?;
    serialize_dataset(&dataset, &args.out)?;
    let stats_path = args.stats.unwrap_or_else(|| io::sibling(&args.out, ".stats.json"));
    io::write_json(&stats_path, &dataset.stats)?;
    log::info!(
        "kept {} of {} sentences, vocabulary {}",
        dataset.stats.sentences_kept,
        dataset.stats.sentences_read,
        dataset.stats.vocab_size
    );
    Ok(())
}
