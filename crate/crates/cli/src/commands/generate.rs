use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dmlm_core::geneval::{generate_many, GenerationReport, GenerationSettings};
use dmlm_core::training::Checkpoint;
use dmlm_core::Real;

use super::{window_of, with_checkpoint};
use crate::failure::{CmdResult, Failure};
use crate::io;

/// Nucleus masses of `--p-sweep`.
pub const SWEEP: [f64; 8] = [0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

#[derive(clap::Args)]
pub struct Args {
    #[arg(long)]
    ckpt: PathBuf,
    /// Whitespace-tokenized text every sample continues.
    #[arg(long)]
    prompt_file: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    p: f64,
    /// Maximum number of generated tokens per sample.
    #[arg(long, default_value_t = 64)]
    max_len: usize,
    #[arg(long, default_value_t = 1)]
    n_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Samples, one per line. With `--p-sweep` this is the stem of
    /// `<stem>.p0.3<ext>` .. `<stem>.p1.0<ext>`.
    #[arg(long)]
    out: PathBuf,
    /// Generate once for each p in 0.3, 0.4, .., 1.0.
    #[arg(long)]
    p_sweep: bool,
    /// Mixture context window; defaults to the training window.
    #[arg(long)]
    window: Option<usize>,
    /// Also write a JSON report with the settings of each run.
    #[arg(long)]
    report: Option<PathBuf>,
}

/// `dir/stem.p0.3.ext` for `dir/stem.ext`.
pub fn sweep_path(out: &Path, p: f64) -> PathBuf {
    let stem = out.file_stem().unwrap_or_default().to_string_lossy();
    let name = match out.extension() {
        Some(ext) => format!("{stem}.p{p:.1}.{}", ext.to_string_lossy()),
        None => format!("{stem}.p{p:.1}"),
    };
    out.with_file_name(name)
}

pub fn run(args: Args) -> CmdResult {
    if args.n_samples == 0 {
        return Err(Failure::input("--n-samples must be at least 1"));
    }
    let prompt = match &args.prompt_file {
        Some(p) => Some(io::read_text(p)?),
        None => None,
    };
    let any = io::load_ckpt(&args.ckpt)?;
    let window = window_of(&any, args.window);
    let runs: Vec<(f64, PathBuf)> = if args.p_sweep {
        SWEEP.iter().map(|&p| (p, sweep_path(&args.out, p))).collect()
    } else {
        vec![(args.p, args.out.clone())]
    };
    let mut reports = Vec::new();
    for (p, path) in runs {
        let samples = with_checkpoint!(&any, |c| sample(c, prompt.as_deref(), p, &args, window))?;
        let mut text = samples.join("\n");
        text.push('\n');
        io::write_bytes(&path, text)?;
        reports.push(GenerationReport {
            samples,
            settings: Some(GenerationSettings {
                p,
                max_len: args.max_len,
                seed: args.seed,
                window,
                prompt: prompt.as_ref().map(|t| t.split_whitespace().collect::<Vec<_>>().join(" ")),
            }),
            metrics: BTreeMap::new(),
        });
    }
    if let Some(path) = &args.report {
        if reports.len() == 1 {
            io::write_json(path, &reports[0])?;
        } else {
            io::write_json(path, &reports)?;
        }
    }
    Ok(())
}

fn sample<S: Real>(
    ckpt: &Checkpoint<S>,
    prompt: Option<&str>,
    p: f64,
    args: &Args,
    window: usize,
) -> CmdResult<Vec<String>> {
    let vocab = &ckpt.meta.vocab;
    let words: Vec<&str> = prompt.map(|t| t.split_whitespace().collect()).unwrap_or_default();
    let prompt_ids = io::encode_words(vocab, &words);
    let out = generate_many(&ckpt.model, &prompt_ids, p, args.max_len, window, args.seed, args.n_samples)?;
    Ok(out.iter().map(|ids| vocab.decode_text(ids)).collect())
}
