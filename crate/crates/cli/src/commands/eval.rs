use std::collections::BTreeMap;
use std::path::PathBuf;

use dmlm_core::corpus::Dataset;
use dmlm_core::geneval::{
    corpus_bleu, distinct_n, lm_score, perplexity, rlm_score, self_bleu, GenerationReport, RlmConfig,
};
use dmlm_core::training::Checkpoint;
use dmlm_core::{Real, TokenId};

use super::{window_of, with_checkpoint};
use crate::failure::{CmdResult, Failure};
use crate::io;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Perplexity,
    Bleu(usize),
    Distinct(usize),
    SelfBleu(usize),
    LmScore,
    RlmScore,
}

impl Metric {
    /// `ppl`, `lm`, `rlm`, or `bleu`/`distinct`/`self-bleu` with an optional
    /// `-N` order (defaults 4, 2 and 4).
    pub fn parse(name: &str) -> Result<Metric, String> {
        let (base, order) = match name.rsplit_once('-') {
            Some((b, n)) if n.chars().all(|c| c.is_ascii_digit()) && !n.is_empty() => {
                let n: usize = n.parse().map_err(|_| format!("bad order in {name:?}"))?;
                if n == 0 {
                    return Err(format!("order must be positive in {name:?}"));
                }
                (b, Some(n))
            }
            _ => (name, None),
        };
        Ok(match (base, order) {
            ("ppl", None) => Metric::Perplexity,
            ("lm", None) => Metric::LmScore,
            ("rlm", None) => Metric::RlmScore,
            ("bleu", n) => Metric::Bleu(n.unwrap_or(4)),
            ("distinct", n) => Metric::Distinct(n.unwrap_or(2)),
            ("self-bleu", n) => Metric::SelfBleu(n.unwrap_or(4)),
            _ => return Err(format!("unknown metric {name:?}")),
        })
    }

    fn needs_samples(self) -> bool {
        !matches!(self, Metric::Perplexity)
    }

    fn needs_model(self) -> bool {
        matches!(self, Metric::Perplexity | Metric::LmScore | Metric::RlmScore)
    }

    fn needs_data(self) -> bool {
        matches!(self, Metric::Perplexity | Metric::RlmScore)
    }
}

#[derive(clap::Args)]
pub struct Args {
    /// Model for ppl and lm, and the architecture of the rlm model.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Prepared dataset scored by ppl and used as the held-out set of rlm.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Comma-separated list of ppl, bleu[-N], distinct[-N], self-bleu[-N], lm, rlm.
    #[arg(long, value_delimiter = ',', required = true)]
    metrics: Vec<String>,
    /// Samples, one whitespace-tokenized sentence per line.
    #[arg(long)]
    samples: Option<PathBuf>,
    /// References aligned line by line with the samples; several references
    /// for one sample are separated by `|||`.
    #[arg(long)]
    refs: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Mixture context window; defaults to the training window.
    #[arg(long)]
    window: Option<usize>,
    /// Fewest samples rlm accepts.
    #[arg(long, default_value_t = 500)]
    rlm_min_samples: usize,
}

fn read_refs(path: &std::path::Path) -> CmdResult<Vec<Vec<Vec<String>>>> {
    Ok(io::read_text(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split("|||")
                .map(|r| r.split_whitespace().map(str::to_string).collect())
                .collect()
        })
        .collect())
}

pub fn run(args: Args) -> CmdResult {
    let metrics: Vec<(String, Metric)> = args
        .metrics
        .iter()
        .map(|m| m.trim())
        .filter(|m| !m.is_empty())
        .map(|m| Metric::parse(m).map(|k| (m.to_string(), k)).map_err(Failure::input))
        .collect::<CmdResult<_>>()?;
    if metrics.is_empty() {
        return Err(Failure::input("no metrics requested"));
    }
    let samples = match &args.samples {
        Some(p) => {
            let s = io::read_lines(p)?;
            if s.is_empty() {
                return Err(Failure::input(format!("{}: no samples", p.display())));
            }
            Some(s)
        }
        None => None,
    };
    if samples.is_none() && metrics.iter().any(|(_, m)| m.needs_samples()) {
        return Err(Failure::input("--samples is required for the requested metrics"));
    }
    let ckpt = match &args.ckpt {
        Some(p) => Some(io::load_ckpt(p)?),
        None if metrics.iter().any(|(_, m)| m.needs_model()) => {
            return Err(Failure::input("--ckpt is required for the requested metrics"));
        }
        None => None,
    };
    let data = match &args.data {
        Some(p) => Some(io::load_dataset(p)?),
        None if metrics.iter().any(|(_, m)| m.needs_data()) => {
            return Err(Failure::input("--data is required for the requested metrics"));
        }
        None => None,
    };
    let refs = args.refs.as_deref().map(read_refs).transpose()?;

    let mut values = BTreeMap::new();
    for (name, metric) in &metrics {
        let value = match *metric {
            Metric::Distinct(n) => distinct_n(samples.as_ref().unwrap(), n)?,
            Metric::SelfBleu(n) => self_bleu(samples.as_ref().unwrap(), n)?,
            Metric::Bleu(n) => {
                let refs = refs
                    .as_ref()
                    .ok_or_else(|| Failure::input("--refs is required for bleu"))?;
                corpus_bleu(samples.as_ref().unwrap(), refs, n)?
            }
            Metric::Perplexity | Metric::LmScore | Metric::RlmScore => {
                let any = ckpt.as_ref().unwrap();
                let window = window_of(any, args.window);
                with_checkpoint!(any, |c| model_metric(
                    c,
                    *metric,
                    data.as_ref(),
                    samples.as_deref(),
                    window,
                    args.rlm_min_samples
                ))?
            }
        };
        if !value.is_finite() {
            return Err(Failure::Internal(anyhow::anyhow!("{name} is not finite ({value})")));
        }
        values.insert(name.clone(), value);
    }
    let report = GenerationReport {
        samples: samples
            .unwrap_or_default()
            .iter()
            .map(|s| s.join(" "))
            .collect(),
        settings: None,
        metrics: values,
    };
    io::write_json(&args.out, &report)
}

fn model_metric<S: Real>(
    ckpt: &Checkpoint<S>,
    metric: Metric,
    data: Option<&Dataset>,
    samples: Option<&[Vec<String>]>,
    window: usize,
    min_samples: usize,
) -> CmdResult<f64> {
    let vocab = &ckpt.meta.vocab;
    if let Some(d) = data {
        if &d.vocab != vocab {
            return Err(Failure::input("dataset vocabulary differs from the checkpoint vocabulary"));
        }
    }
    let encoded = || -> Vec<Vec<TokenId>> {
        samples
            .unwrap_or_default()
            .iter()
            .map(|s| io::framed(vocab, s))
            .collect()
    };
    Ok(match metric {
        Metric::Perplexity => perplexity(&ckpt.model, &data.expect("checked").sequences, window)?,
        Metric::LmScore => lm_score(&ckpt.model, &encoded(), window)?,
        Metric::RlmScore => {
            let heldout: Vec<Vec<TokenId>> = data
                .expect("checked")
                .sequences
                .iter()
                .map(|s| s.ids.clone())
                .collect();
            let config = RlmConfig {
                model: ckpt.meta.model.clone(),
                train: ckpt.meta.train.clone(),
                min_samples,
                seed: ckpt.meta.train.seed,
            };
            rlm_score(&encoded(), &heldout, &config)?
        }
        _ => unreachable!("not a model metric"),
    })
}
