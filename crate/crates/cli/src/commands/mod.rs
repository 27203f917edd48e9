pub mod attn;
pub mod eval;
pub mod generate;
pub mod prepare;
pub mod train;

use dmlm_core::training::AnyCheckpoint;

/// Evaluates `$body` with `$ckpt` bound to the checkpoint at its stored precision.
macro_rules! with_checkpoint {
    ($any:expr, |$ckpt:ident| $body:expr) => {
        match $any {
            dmlm_core::training::AnyCheckpoint::F32($ckpt) => $body,
            dmlm_core::training::AnyCheckpoint::F64($ckpt) => $body,
        }
    };
}
pub(crate) use with_checkpoint;

/// Context window stored with a checkpoint unless overridden.
pub fn window_of(any: &AnyCheckpoint, flag: Option<usize>) -> usize {
    flag.unwrap_or(any.meta().train.window)
}

