use std::path::PathBuf;

use dmlm_core::corpus::{BOS, RESERVED};
use dmlm_core::mixture::attention_rows;
use dmlm_core::training::Checkpoint;
use dmlm_core::{Flavor, Real};

use super::{window_of, with_checkpoint};
use crate::failure::{CmdResult, Failure};
use crate::io;

#[derive(clap::Args)]
pub struct Args {
    #[arg(long)]
    ckpt: PathBuf,
    /// Whitespace-tokenized sentence to teacher-force.
    #[arg(long)]
    sentence: String,
    #[arg(long)]
    out: PathBuf,
    /// Mixture context window; defaults to the training window.
    #[arg(long)]
    window: Option<usize>,
}

pub fn run(args: Args) -> CmdResult {
    let words: Vec<&str> = args.sentence.split_whitespace().collect();
    if words.is_empty() {
        return Err(Failure::input("--sentence is empty"));
    }
    let any = io::load_ckpt(&args.ckpt)?;
    if any.meta().model.flavor == Flavor::Baseline {
        return Err(Failure::contract("a baseline model has no dependency attention"));
    }
    let window = window_of(&any, args.window);
    let rows = with_checkpoint!(&any, |c| rows_for(c, &words, window))?;

    let mut csv = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["", RESERVED[BOS as usize]];
    header.extend(&words[..words.len() - 1]);
    let csv_err = |e: csv::Error| Failure::Internal(e.into());
    csv.write_record(&header).map_err(csv_err)?;
    for (word, row) in words.iter().zip(&rows) {
        let mut record = vec![word.to_string()];
        record.extend(row.iter().map(|w| w.to_string()));
        csv.write_record(&record).map_err(csv_err)?;
    }
    let bytes = csv.into_inner().map_err(|e| Failure::Internal(anyhow::anyhow!("{e}")))?;
    io::write_bytes(&args.out, bytes)
}

/// Row `j` is the attention used to predict `words[j]` from BOS and the words
/// before it.
fn rows_for<S: Real>(ckpt: &Checkpoint<S>, words: &[&str], window: usize) -> CmdResult<Vec<Vec<f64>>> {
    let mut inputs = vec![BOS];
    inputs.extend(io::encode_words(&ckpt.meta.vocab, &words[..words.len() - 1]));
    let rows = attention_rows(&ckpt.model, &inputs, window)?;
    Ok(rows
        .into_iter()
        .map(|r| r.into_iter().map(Real::as_f64).collect())
        .collect())
}
