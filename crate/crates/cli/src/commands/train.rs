use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::ValueEnum;
use dmlm_core::corpus::{Dataset, TargetedSequence};
use dmlm_core::training::{
    run_training, AnyCheckpoint, Checkpoint, CheckpointMeta, EpochLog, Phase, TrainConfig,
};
use dmlm_core::{
    BackboneConfig, DType, Flavor, Model, ModelConfig, Real, RecurrentConfig, TransformerConfig,
};
use serde::Deserialize;

use crate::failure::{CmdResult, Failure};
use crate::io;

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackboneKind {
    Recurrent,
    Transformer,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FlavorArg {
    Baseline,
    Dmlm,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PhaseArg {
    Dep,
    Finetune,
    Baseline,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

impl From<FlavorArg> for Flavor {
    fn from(f: FlavorArg) -> Self {
        match f {
            FlavorArg::Baseline => Flavor::Baseline,
            FlavorArg::Dmlm => Flavor::Dmlm,
        }
    }
}

impl From<PhaseArg> for Phase {
    fn from(p: PhaseArg) -> Self {
        match p {
            PhaseArg::Dep => Phase::DepModeling,
            PhaseArg::Finetune => Phase::MixtureFinetune,
            PhaseArg::Baseline => Phase::Baseline,
        }
    }
}

impl From<Precision> for DType {
    fn from(p: Precision) -> Self {
        match p {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

/// Contents of `--config`. Flags given on the command line take precedence.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub backbone: Option<BackboneConfig>,
    pub flavor: Option<Flavor>,
    pub precision: Option<DType>,
    pub train: Option<TrainConfig>,
}

#[derive(clap::Args)]
pub struct Args {
    /// Prepared training dataset.
    #[arg(long)]
    data: PathBuf,
    /// Prepared validation dataset with the same vocabulary; without it the
    /// last 10% of the training sequences are held out.
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long, value_enum)]
    backbone: Option<BackboneKind>,
    #[arg(long, value_enum)]
    flavor: Option<FlavorArg>,
    #[arg(long, value_enum)]
    phase: Option<PhaseArg>,
    /// Checkpoint to continue from.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// JSON-lines epoch log; defaults to `<out>.log.jsonl`.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Permit mixture finetuning without a dependency-modeling checkpoint.
    #[arg(long)]
    allow_from_scratch: bool,
    #[arg(long, value_enum)]
    precision: Option<Precision>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Mixture context window; 0 is unbounded.
    #[arg(long)]
    window: Option<usize>,
    /// Hidden (and embedding) size of a new model.
    #[arg(long)]
    hidden: Option<usize>,
    /// Layer count of a new model.
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
}

fn default_backbone(kind: BackboneKind) -> BackboneConfig {
    match kind {
        BackboneKind::Recurrent => BackboneConfig::Recurrent(RecurrentConfig::default()),
        BackboneKind::Transformer => BackboneConfig::Transformer(TransformerConfig::default()),
    }
}

fn kind_of(b: &BackboneConfig) -> BackboneKind {
    match b {
        BackboneConfig::Recurrent(_) => BackboneKind::Recurrent,
        BackboneConfig::Transformer(_) => BackboneKind::Transformer,
    }
}

fn shape_backbone(mut b: BackboneConfig, args: &Args, vocab_size: usize) -> CmdResult<BackboneConfig> {
    match &mut b {
        BackboneConfig::Recurrent(c) => {
            c.vocab_size = vocab_size;
            if let Some(h) = args.hidden {
                c.embed_dim = h;
                c.hidden_dim = h;
            }
            if let Some(l) = args.layers {
                c.num_layers = l;
            }
        }
        BackboneConfig::Transformer(c) => {
            c.vocab_size = vocab_size;
            if let Some(h) = args.hidden {
                if h % c.num_heads != 0 {
                    return Err(Failure::input(format!(
                        "hidden size {h} is not divisible by {} heads",
                        c.num_heads
                    )));
                }
                c.model_dim = h;
                c.ffn_dim = 4 * h;
            }
            if let Some(l) = args.layers {
                c.num_layers = l;
            }
        }
    }
    if let Some(p) = args.dropout {
        b.set_dropout(p);
    }
    Ok(b)
}

fn split_validation(data: &Dataset, val: Option<Dataset>) -> CmdResult<(Vec<TargetedSequence>, Vec<TargetedSequence>)> {
    match val {
        Some(v) => {
            if v.vocab != data.vocab {
                return Err(Failure::input(
                    "validation dataset was prepared with a different vocabulary (use prepare --vocab-from)",
                ));
            }
            Ok((data.sequences.clone(), v.sequences))
        }
        None => {
            let held = data.sequences.len() / 10;
            let cut = data.sequences.len() - held;
            Ok((data.sequences[..cut].to_vec(), data.sequences[cut..].to_vec()))
        }
    }
}

struct Start {
    model: ModelConfig,
    init: Option<AnyCheckpoint>,
    train: TrainConfig,
    dtype: DType,
}

fn resolve(args: &Args, file: RunConfig, data: &Dataset) -> CmdResult<Start> {
    let init = args.init.as_deref().map(io::load_ckpt).transpose()?;
    let mut train = file
        .train
        .clone()
        .or_else(|| init.as_ref().map(|c| c.meta().train.clone()))
        .unwrap_or_default();
    let phase_from_file = file.train.as_ref().map(|t| t.phase);
    let (model, dtype) = match &init {
        Some(ckpt) => {
            let meta = ckpt.meta();
            if meta.vocab != data.vocab {
                return Err(Failure::input("checkpoint vocabulary differs from the dataset vocabulary"));
            }
            if let Some(kind) = args.backbone {
                if kind != kind_of(&meta.model.backbone) {
                    return Err(Failure::input("--backbone conflicts with the checkpoint's backbone"));
                }
            }
            if let Some(f) = args.flavor {
                if Flavor::from(f) != meta.model.flavor {
                    return Err(Failure::contract(format!(
                        "--flavor cannot change a {:?} checkpoint",
                        meta.model.flavor
                    )));
                }
            }
            let mut model = meta.model.clone();
            if let Some(p) = args.dropout {
                model.backbone.set_dropout(p);
            }
            (model, args.precision.map(DType::from).unwrap_or(meta.dtype))
        }
        None => {
            let backbone = match (file.backbone, args.backbone) {
                (Some(b), Some(kind)) if kind_of(&b) != kind => {
                    return Err(Failure::input("--backbone conflicts with the backbone in --config"));
                }
                (Some(b), _) => b,
                (None, kind) => default_backbone(kind.unwrap_or(BackboneKind::Recurrent)),
            };
            let phase = args.phase.map(Phase::from).or(phase_from_file);
            let flavor = args.flavor.map(Flavor::from).or(file.flavor).unwrap_or(match phase {
                Some(Phase::Baseline) => Flavor::Baseline,
                _ => Flavor::Dmlm,
            });
            let model = ModelConfig {
                backbone: shape_backbone(backbone, args, data.vocab.len())?,
                flavor,
            };
            let dtype = args.precision.map(DType::from).or(file.precision).unwrap_or(DType::F32);
            (model, dtype)
        }
    };
    train.phase = args
        .phase
        .map(Phase::from)
        .or(phase_from_file)
        .unwrap_or(match model.flavor {
            Flavor::Baseline => Phase::Baseline,
            Flavor::Dmlm => Phase::DepModeling,
        });
    if let Some(v) = args.seed {
        train.seed = v;
    }
    if args.lr.is_some() {
        train.lr = args.lr;
    }
    if let Some(v) = args.epochs {
        train.max_epochs = v;
    }
    if let Some(v) = args.batch_size {
        train.batch_size = v;
    }
    if let Some(v) = args.patience {
        train.patience = v;
    }
    if let Some(v) = args.weight_decay {
        train.weight_decay = v;
    }
    if let Some(v) = args.window {
        train.window = v;
    }
    if args.allow_from_scratch {
        train.allow_from_scratch = true;
    }
    Ok(Start {
        model,
        init,
        train,
        dtype,
    })
}

pub fn run(args: Args) -> CmdResult {
    let file: RunConfig = match &args.config {
        Some(p) => serde_json::from_str(&io::read_text(p)?)
            .map_err(|e| Failure::input(format!("{}: {e}", p.display())))?,
        None => RunConfig::default(),
    };
    let data = io::load_dataset(&args.data)?;
    let val = args.val.as_deref().map(io::load_dataset).transpose()?;
    let (train_set, val_set) = split_validation(&data, val)?;
    let start = resolve(&args, file, &data)?;
    let log_path = args.log.clone().unwrap_or_else(|| io::sibling(&args.out, ".log.jsonl"));
    let init_phase = start.init.as_ref().map(|c| c.meta().phase);
    match start.dtype {
        DType::F32 => {
            let model = initial_model::<f32>(&start)?;
            train_and_save(&args, start, model, init_phase, &train_set, &val_set, &log_path, &data)
        }
        DType::F64 => {
            let model = initial_model::<f64>(&start)?;
            train_and_save(&args, start, model, init_phase, &train_set, &val_set, &log_path, &data)
        }
    }
}

fn initial_model<S: Real>(start: &Start) -> CmdResult<Model<S>> {
    let model = match &start.init {
        Some(ckpt) => {
            let c: Checkpoint<S> = ckpt.clone().into_precision();
            Model::from_params(start.model.clone(), c.model.params().clone())
        }
        None => Model::new(start.model.clone(), start.train.seed),
    };
    model.map_err(Failure::input)
}

#[allow(clippy::too_many_arguments)]
fn train_and_save<S: Real>(
    args: &Args,
    start: Start,
    model: Model<S>,
    init_phase: Option<Phase>,
    train_set: &[TargetedSequence],
    val_set: &[TargetedSequence],
    log_path: &std::path::Path,
    data: &Dataset,
) -> CmdResult {
    let file = File::create(log_path).map_err(|e| Failure::input(format!("{}: {e}", log_path.display())))?;
    let mut log = BufWriter::new(file);
    let mut write_error = None;
    let mut on_epoch = |row: &EpochLog| {
        log::info!(
            "{} epoch {}: train {:?} val {:.4}",
            row.phase,
            row.epoch,
            row.train_loss,
            row.val_loss
        );
        let line = serde_json::to_string(row).expect("log rows serialize");
        if let Err(e) = writeln!(log, "{line}").and_then(|()| log.flush()) {
            write_error.get_or_insert(e);
        }
    };
    let outcome = run_training(&start.train, train_set, val_set, model, init_phase, &mut on_epoch)?;
    if let Some(e) = write_error {
        return Err(Failure::input(format!("{}: {e}", log_path.display())));
    }
    let ckpt = Checkpoint {
        meta: CheckpointMeta {
            model: start.model,
            vocab: data.vocab.clone(),
            train: start.train.clone(),
            phase: start.train.phase,
            epoch: outcome.best_epoch,
            val_loss: outcome.best_val_loss,
            rng: outcome.rng,
            dtype: S::DTYPE,
        },
        model: outcome.model,
    };
    ckpt.save(&args.out)?;
    Ok(())
}
