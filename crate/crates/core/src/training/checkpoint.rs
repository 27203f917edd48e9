use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Phase, TrainConfig, TrainError};
use crate::backbone::{Model, ModelConfig, ParamStore};
use crate::binio::{FrameError, Reader, Writer};
use crate::corpus::Vocab;
use crate::numerics::{DType, Real, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DMCK";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Positions of the training RNG streams when the checkpoint was taken.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSnapshot {
    pub seed: u64,
    /// Word positions as decimal strings (they are 128-bit).
    pub data_order: String,
    pub dropout: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub vocab: Vocab,
    pub train: TrainConfig,
    pub phase: Phase,
    pub epoch: usize,
    pub val_loss: f64,
    pub rng: RngSnapshot,
    pub dtype: DType,
}

#[derive(Debug, Clone)]
pub struct Checkpoint<S> {
    pub meta: CheckpointMeta,
    pub model: Model<S>,
}

fn frame(e: FrameError) -> TrainError {
    TrainError::Format(e.to_string())
}

impl<S: Real> Checkpoint<S> {
    pub fn to_bytes(&self) -> Result<Vec<u8>, TrainError> {
        let mut meta = self.meta.clone();
        meta.model = self.model.config().clone();
        meta.dtype = S::DTYPE;
        let json = serde_json::to_vec(&meta).map_err(|e| TrainError::Format(e.to_string()))?;
        let mut w = Writer::new(CHECKPOINT_MAGIC, CHECKPOINT_VERSION);
        w.blob(&json);
        let params = self.model.params();
        w.u32(params.len() as u32);
        for (name, t) in params.iter() {
            w.blob(name.as_bytes());
            w.u8(S::DTYPE.code());
            w.u32(t.shape().len() as u32);
            for &d in t.shape() {
                w.u32(d as u32);
            }
            let buf = w.buf_mut();
            for &x in t.data() {
                x.write_le(buf);
            }
        }
        Ok(w.finish())
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// A checkpoint at whichever precision it was stored in.
#[derive(Debug, Clone)]
pub enum AnyCheckpoint {
    F32(Checkpoint<f32>),
    F64(Checkpoint<f64>),
}

impl AnyCheckpoint {
    pub fn meta(&self) -> &CheckpointMeta {
        match self {
            AnyCheckpoint::F32(c) => &c.meta,
            AnyCheckpoint::F64(c) => &c.meta,
        }
    }

    /// Converts to precision `T`; exact when `T` is the stored precision.
    pub fn into_precision<T: Real>(self) -> Checkpoint<T> {
        match self {
            AnyCheckpoint::F32(c) => Checkpoint {
                model: c.model.cast(),
                meta: c.meta,
            },
            AnyCheckpoint::F64(c) => Checkpoint {
                model: c.model.cast(),
                meta: c.meta,
            },
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainError> {
        let mut r = Reader::open(bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION).map_err(frame)?;
        let meta: CheckpointMeta = serde_json::from_slice(r.blob("header").map_err(frame)?)
            .map_err(|e| TrainError::Format(format!("header: {e}")))?;
        Ok(match meta.dtype {
            DType::F32 => AnyCheckpoint::F32(read_params(&mut r, meta)?),
            DType::F64 => AnyCheckpoint::F64(read_params(&mut r, meta)?),
        })
    }
}

fn read_params<S: Real>(r: &mut Reader<'_>, meta: CheckpointMeta) -> Result<Checkpoint<S>, TrainError> {
    let count = r.u32("parameter count").map_err(frame)?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name = String::from_utf8(r.blob("parameter name").map_err(frame)?.to_vec())
            .map_err(|_| TrainError::Format("parameter name is not UTF-8".into()))?;
        let code = r.u8("dtype").map_err(frame)?;
        if DType::from_code(code) != Some(S::DTYPE) {
            return Err(TrainError::Format(format!(
                "parameter {name} has dtype code {code}, expected {:?}",
                S::DTYPE
            )));
        }
        let ndim = r.u32("rank").map_err(frame)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32("shape").map_err(frame)? as usize);
        }
        let n: usize = shape.iter().product();
        let size = S::DTYPE.size();
        let raw = r.take(n * size, "parameter data").map_err(frame)?;
        let data = raw.chunks_exact(size).map(S::read_le).collect();
        let t = Tensor::new(shape, data)?;
        params.push(name, t);
    }
    if !r.is_done() {
        return Err(TrainError::Format("trailing bytes after parameters".into()));
    }
    let model = Model::from_params(meta.model.clone(), params)?;
    Ok(Checkpoint { meta, model })
}

pub fn load_checkpoint(path: &Path) -> Result<AnyCheckpoint, TrainError> {
    let bytes = std::fs::read(path).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    AnyCheckpoint::from_bytes(&bytes)
}
